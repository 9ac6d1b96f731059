"""8-bit image files <-> float arrays in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InputError

SUFFIXES = (".png", ".ppm", ".pgm")


def load_image(path) -> np.ndarray:
    """Read an 8-bit gray or RGB image as float64 in [0, 1].

    Gray images come back 2-D ``(H, W)``; colour images ``(H, W, 3)``. An alpha
    channel is dropped.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("L" if im.mode in ("1", "I", "I;16", "F", "LA") else "RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (FileNotFoundError, IsADirectoryError, PermissionError, UnidentifiedImageError, OSError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, img: np.ndarray) -> None:
    """Write ``round(clamp(v, 0, 1) * 255)`` as PNG (or PPM/PGM by suffix)."""
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise InputError(f"cannot save array of shape {img.shape} as an image")
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pgm") else "PNG"
    try:
        Image.fromarray(arr).save(path, format=fmt)
    except OSError as exc:
        raise InputError(f"cannot write image {path}: {exc}") from exc


def list_images(folder) -> list[Path]:
    """Image files in ``folder`` sorted by file name."""
    folder = Path(folder)
    if not folder.is_dir():
        raise InputError(f"not a directory: {folder}")
    return sorted((p for p in folder.iterdir() if p.suffix.lower() in SUFFIXES and p.is_file()),
                  key=lambda p: p.name)
