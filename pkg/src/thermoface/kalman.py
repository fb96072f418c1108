"""Per-pixel scalar Kalman filter used as an image denoising pre-pass.

Each pixel carries a static scalar state (identity transition). Its
measurements are the pixel values in a square neighbourhood, visited in order
of increasing distance from the centre, so the filter acts as an adaptive
weighted average whose weights come from the gain recurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .imageio import Image

# floor for an automatically estimated measurement variance of exactly zero
_R_FLOOR = 1e-12


@dataclass(frozen=True)
class KalmanState:
    x: float
    p: float


@dataclass(frozen=True)
class KalmanConfig:
    q: float = 1e-4
    r: float | str = "auto"
    init_p: float = 1.0
    window: int = 3

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be an odd integer >= 1, got {self.window}")
        if self.q < 0:
            raise ValueError("q must be >= 0")
        if isinstance(self.r, str):
            if self.r != "auto":
                raise ValueError(f"r must be a number or 'auto', got {self.r!r}")
        elif self.r < 0:
            raise ValueError("r must be >= 0")
        elif self.r == 0 and self.q == 0 and self.window > 1:
            raise ValueError("q and r cannot both be zero when window > 1")
        if not self.init_p > 0:
            raise ValueError("init_p must be > 0")


def kalman_step(s: KalmanState, z: float, q: float, r: float) -> KalmanState:
    """One predict/update cycle of the static scalar model."""
    if q < 0 or r < 0:
        raise ValueError("q and r must be non-negative")
    gain = kalman_gain(s.p, q, r)
    return KalmanState(s.x + gain * (z - s.x), (1.0 - gain) * (s.p + q))


def kalman_gain(p: float, q: float, r: float) -> float:
    """``K = (p + q) / (p + q + r)``; undefined when all three are zero."""
    p_prior = p + q
    if p_prior + r == 0:
        raise ZeroDivisionError("Kalman gain undefined: predicted variance and r are both zero")
    return float(p_prior / (p_prior + r))


def window_offsets(window: int) -> tuple[np.ndarray, np.ndarray]:
    """(dy, dx) offsets sorted by Euclidean distance, ties in row-major order."""
    h = window // 2
    offs = sorted(((dy, dx) for dy in range(-h, h + 1) for dx in range(-h, h + 1)),
                  key=lambda o: (o[0] ** 2 + o[1] ** 2, o[0], o[1]))
    dy, dx = zip(*offs)
    return np.array(dy, dtype=np.int64), np.array(dx, dtype=np.int64)


def estimate_noise_variance(img: Image | np.ndarray) -> float:
    """Noise variance from the MAD of the 4-neighbour Laplacian.

    For i.i.d. noise of variance s2 the Laplacian response has variance 20*s2;
    the MAD (scaled by 1.4826) gives a robust standard deviation of it.
    Accepts raw arrays so it can be applied before clamping.
    """
    a = img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or min(a.shape) < 3:
        raise ValueError(f"need an image of at least 3x3, got {a.shape}")
    lap = (a[:-2, 1:-1] + a[2:, 1:-1] + a[1:-1, :-2] + a[1:-1, 2:] - 4.0 * a[1:-1, 1:-1])
    mad = np.median(np.abs(lap - np.median(lap)))
    sigma = 1.4826 * mad / math.sqrt(20.0)
    return float(sigma * sigma)


def _auto_r(img: Image) -> float:
    if min(img.pixels.shape) < 3:
        # too small to separate noise from structure: treat all variation as noise
        return float(img.pixels.var())
    return estimate_noise_variance(img)


def denoise_image(img: Image, cfg: KalmanConfig | None = None) -> Image:
    cfg = cfg or KalmanConfig()
    r = _auto_r(img) if cfg.r == "auto" else float(cfg.r)
    if r == 0 and cfg.q == 0 and cfg.window > 1:
        r = _R_FLOOR
    dy, dx = window_offsets(cfg.window)
    out = kernels.kalman_denoise(img.pixels, dy, dx, cfg.q, r, cfg.init_p)
    return Image.clamped(out)


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB with peak 1; ``inf`` for identical images."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"dimension mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
