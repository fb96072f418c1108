"""Thermal face classification pipeline built on numpy.

Kalman-filter denoising, VGG-19 / ResNet-50 construction with exact parameter
accounting, layers with hand-written backward passes, training and metrics.
"""

from .kernels import BACKEND
from .imageio import Image, LabeledDataset, decode_pgm, encode_pgm, synth_thermal
from .kalman import KalmanConfig, denoise_image, psnr
from .models import (Model, build_resnet50, build_small_cnn, build_vgg19, count_params,
                     load_weights, save_weights, summarize)
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Image", "LabeledDataset", "decode_pgm", "encode_pgm", "synth_thermal",
    "KalmanConfig", "denoise_image", "psnr", "Model", "build_vgg19", "build_resnet50",
    "build_small_cnn", "count_params", "summarize", "save_weights", "load_weights",
    "TrainConfig", "train", "evaluate",
]
