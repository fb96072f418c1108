"""Grayscale image I/O, resizing, dataset ingestion and synthetic data."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class PGMError(ValueError):
    pass


@dataclass
class Image:
    """Grayscale image; ``pixels`` is an (height, width) float64 array in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"image pixels must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all((px >= 0.0) & (px <= 1.0)):
            raise ValueError("pixel values must lie in [0, 1]")
        self.pixels = px

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def clamped(cls, values) -> Image:
        return cls(np.clip(values, 0.0, 1.0))


@dataclass
class LabeledDataset:
    items: list[tuple[Image, int]]
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        k = len(self.class_names)
        for _, label in self.items:
            if not 0 <= label < k:
                raise ValueError(f"label {label} out of range for {k} classes")

    def __len__(self):
        return len(self.items)

    @property
    def labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.items], dtype=np.int64)


# --- PGM --------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pgm(data: bytes) -> Image:
    """Decode a binary (P5) PGM; 8- or 16-bit samples, normalized by maxval."""
    if data[:2] != b"P5":
        raise PGMError(f"unsupported magic {data[:2]!r}; only binary PGM (P5) is read")
    pos = 2
    header = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PGMError("truncated PGM header")
        header.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(tok) for tok in header)
    except ValueError as exc:
        raise PGMError(f"malformed PGM header {header!r}") from exc
    if width < 1 or height < 1:
        raise PGMError(f"bad PGM dimensions {width}x{height}")
    if not 0 < maxval <= 65535:
        raise PGMError(f"maxval must be in 1..65535, got {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PGMError("missing whitespace after PGM header")
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise PGMError(f"truncated PGM payload: {len(payload)} of {need} bytes")
    samples = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    if samples.max(initial=0) > maxval:
        raise PGMError("sample exceeds maxval")
    return Image(samples.reshape(height, width) / maxval)


def encode_pgm(img: Image, maxval: int = 255) -> bytes:
    if not 0 < maxval <= 65535:
        raise ValueError(f"maxval must be in 1..65535, got {maxval}")
    q = np.rint(img.pixels * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    return header + q.astype(dtype).tobytes()


def read_pgm(path) -> Image:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path, img: Image, maxval: int = 255) -> None:
    Path(path).write_bytes(encode_pgm(img, maxval))


# --- transforms -------------------------------------------------------------

def resize_bilinear(img: Image, out_w: int, out_h: int) -> Image:
    """Bilinear resize with corner-aligned sampling (corners map onto corners)."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    src = img.pixels
    h, w = src.shape
    if (w, h) == (out_w, out_h):
        return Image(src.copy())

    def coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = coords(h, out_h)
    x0, x1, fx = coords(w, out_w)
    fy = fy[:, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return Image.clamped(top * (1 - fy) + bottom * fy)


def to_input_tensor(img: Image, channels: int = 3) -> np.ndarray:
    """[channels, H, W] tensor; 3 channels replicate the grayscale plane."""
    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    return np.repeat(img.pixels[None, :, :], channels, axis=0)


# --- datasets ---------------------------------------------------------------

def load_image_folder(root, target: int, skip_bad: bool = True) -> LabeledDataset:
    """Load a directory-per-class layout of PGM files.

    Classes are the subdirectory names in lexicographic order; items follow
    class order, then file-name order. Undecodable files are logged and
    skipped, or raise when ``skip_bad`` is false.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not class_dirs:
        raise ValueError(f"no class subdirectories under {root}")
    items = []
    for label, cdir in enumerate(class_dirs):
        for f in sorted(cdir.iterdir()):
            if not f.is_file() or f.name.startswith("."):
                continue
            try:
                img = read_pgm(f)
            except (PGMError, OSError) as exc:
                if not skip_bad:
                    raise PGMError(f"{f}: {exc}") from exc
                log.warning("skipping undecodable image %s: %s", f, exc)
                continue
            if (img.width, img.height) != (target, target):
                img = resize_bilinear(img, target, target)
            items.append((img, label))
    if not items:
        raise ValueError(f"no decodable images under {root}")
    return LabeledDataset(items, [d.name for d in class_dirs])


def save_image_folder(ds: LabeledDataset, root) -> None:
    root = Path(root)
    counters: dict[int, int] = {}
    for img, label in ds.items:
        d = root / ds.class_names[label]
        d.mkdir(parents=True, exist_ok=True)
        i = counters.get(label, 0)
        counters[label] = i + 1
        write_pgm(d / f"{i:05d}.pgm", img)


def hotspot_center(k: int, num_classes: int, side: int) -> tuple[float, float]:
    """Class-specific hot-spot position: evenly spaced on a circle around the center."""
    angle = 2.0 * np.pi * k / num_classes
    radius = side / 4.0
    c = (side - 1) / 2.0
    return c + radius * np.sin(angle), c + radius * np.cos(angle)


def synth_thermal(num_classes: int, per_class: int, side: int, noise_sd: float,
                  seed: int) -> LabeledDataset:
    """Deterministic thermal-like dataset: one Gaussian hot spot per class plus noise.

    Hot-spot positions depend only on the class index, so datasets drawn with
    different seeds share a label space and differ only in noise.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1:
        raise ValueError("need at least 1 image per class")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    width = side / 8.0
    items = []
    for k in range(num_classes):
        cy, cx = hotspot_center(k, num_classes, side)
        clean = 0.15 + 0.7 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
        for _ in range(per_class):
            noisy = clean + noise_sd * rng.standard_normal(clean.shape) if noise_sd > 0 else clean
            items.append((Image.clamped(noisy), k))
    names = [f"class_{k:0{len(str(num_classes - 1))}d}" for k in range(num_classes)]
    return LabeledDataset(items, names)


def parse_synth_spec(spec: str) -> tuple[int, int, int]:
    """Parse the ``CxNxS`` shorthand (classes x per-class x side)."""
    parts = spec.lower().split("x")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise ValueError(f"synthetic spec must look like 2x50x32, got {spec!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def dataset_tensor(ds: LabeledDataset, channels: int) -> np.ndarray:
    return np.stack([to_input_tensor(img, channels) for img, _ in ds.items])


__all__ = [
    "Image", "LabeledDataset", "PGMError", "decode_pgm", "encode_pgm", "read_pgm", "write_pgm",
    "resize_bilinear", "to_input_tensor", "load_image_folder", "save_image_folder",
    "synth_thermal", "parse_synth_spec", "dataset_tensor", "hotspot_center",
]
