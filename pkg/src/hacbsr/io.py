"""File formats: grayscale PNG images, kernel CSV, JSON documents."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image


def write_image(path, x: np.ndarray, bits: int = 8) -> Path:
    """Clamp to [0, 1] and write a grayscale PNG with 8 or 16 bits per pixel."""
    path = Path(path)
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    if bits == 8:
        img = Image.fromarray(np.round(x * 255).astype(np.uint8))
    elif bits == 16:
        img = Image.fromarray(np.round(x * 65535).astype(np.uint16))
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        img.save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc
    return path


def read_image(path) -> np.ndarray:
    """Read a PNG (or any Pillow-readable) image as grayscale floats in [0, 1]."""
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=float)
        return arr / (65535.0 if arr.max() > 255 or img.mode.startswith("I;16") else 255.0)
    return np.asarray(img.convert("L"), dtype=float) / 255.0


def write_kernel_csv(path, kernel: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(kernel, dtype=float), delimiter=",", fmt="%.17g")
    return path


def read_kernel_csv(path) -> np.ndarray:
    k = np.loadtxt(Path(path), delimiter=",", ndmin=2)
    return k


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
