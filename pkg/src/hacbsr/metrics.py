"""Image and kernel quality metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .degradation import bicubic_resize
from .exceptions import ShapeError

PSNR_CAP = 100.0


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 dB."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak**2 / mse))


def ssim(a, b, window: int = 11, data_range: float = 1.0, sigma: float = 1.5) -> float:
    """Mean SSIM with a Gaussian window (border of half a window excluded)."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < window:
        raise ShapeError(f"image {a.shape} smaller than window {window}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    half = window // 2
    filt = lambda z: ndimage.gaussian_filter(z, sigma, truncate=half / sigma, mode="reflect")
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a**2
    sbb = filt(b * b) - mu_b**2
    sab = filt(a * b) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2))
    return float(smap[half:-half, half:-half].mean())


def center_of_mass_shift(k: np.ndarray) -> tuple[int, int]:
    """Integer (row, col) roll that moves the kernel's centre of mass to the grid centre."""
    k = np.asarray(k, dtype=float)
    c = (k.shape[0] - 1) / 2
    rows, cols = np.indices(k.shape)
    total = k.sum()
    mr, mc = (k * rows).sum() / total, (k * cols).sum() / total
    return int(round(c - mr)), int(round(c - mc))


def align_kernel(k: np.ndarray) -> np.ndarray:
    dr, dc = center_of_mass_shift(k)
    return np.roll(np.asarray(k, dtype=float), (dr, dc), axis=(0, 1))


def kernel_psnr(k_est, k_true) -> float:
    """PSNR between kernels after centre-of-mass alignment, with peak ``max(k_true)``."""
    k_est, k_true = _pair(k_est, k_true)
    return psnr(align_kernel(k_est), align_kernel(k_true), peak=float(k_true.max()))


def bicubic_upsample(y, scale: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return bicubic_resize(y, (y.shape[0] * scale, y.shape[1] * scale))


@dataclass
class MetricRecord:
    id: str
    scale: int
    psnr: float
    ssim: float
    kernel_psnr: float = float("nan")


@dataclass
class MetricReport:
    records: list[MetricRecord] = field(default_factory=list)
    convention: str = "full image, no border crop"

    def add(self, record: MetricRecord) -> None:
        self.records.append(record)

    def averages(self) -> dict:
        if not self.records:
            return {"psnr": float("nan"), "ssim": float("nan"), "kernel_psnr": float("nan")}
        return {key: float(np.mean([getattr(r, key) for r in self.records]))
                for key in ("psnr", "ssim", "kernel_psnr")}

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "scale", "psnr", "ssim", "kernel_psnr"])
            for r in self.records:
                w.writerow([r.id, r.scale, repr(float(r.psnr)), repr(float(r.ssim)),
                            repr(float(r.kernel_psnr))])
            avg = self.averages()
            w.writerow(["average", "", repr(avg["psnr"]), repr(avg["ssim"]),
                        repr(avg["kernel_psnr"])])
        return path
