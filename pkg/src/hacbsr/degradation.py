"""Blur kernels and the blur-then-downsample degradation operator.

Images and kernels are plain 2D ``numpy`` arrays. A kernel is valid when it is
square with odd side, nonnegative, and sums to one; :func:`check_kernel`
enforces that contract at module boundaries.

The degradation is ``y = (x * k) downsampled by s + z``, where ``*`` is a true
2D convolution (kernel flipped) under reflective boundary handling, the
downsampling keeps every ``s``-th pixel starting at offset 0, and ``z`` is
i.i.d. Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .exceptions import CapacityError, ParameterDomainError, ShapeError

KERNEL_SUM_ATOL = 1e-6
MAX_DENSE_PIXELS = 4096


@dataclass(frozen=True)
class CovarianceSpec:
    """Parameters of an anisotropic Gaussian covariance.

    ``sigma1`` acts along the horizontal (column) axis and ``sigma2`` along
    the vertical (row) axis, both in pixels; ``rho`` is the correlation.
    """

    sigma1: float
    sigma2: float
    rho: float

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ParameterDomainError(
                f"sigmas must be positive, got ({self.sigma1}, {self.sigma2})")
        if not abs(self.rho) < 1:
            raise ParameterDomainError(f"|rho| must be < 1, got {self.rho}")

    @property
    def matrix(self) -> np.ndarray:
        s1, s2, r = self.sigma1, self.sigma2, self.rho
        return np.array([[s1 * s1, r * s1 * s2], [r * s1 * s2, s2 * s2]])

    def as_dict(self) -> dict:
        return {"sigma1": self.sigma1, "sigma2": self.sigma2, "rho": self.rho}


@dataclass(frozen=True)
class DegradationSpec:
    kernel: np.ndarray
    scale: int
    noise_sigma: float = 0.0
    mode: str = "strided"

    def __post_init__(self):
        check_kernel(self.kernel)
        if int(self.scale) != self.scale or self.scale < 1:
            raise ValueError(f"scale must be a positive integer, got {self.scale}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.mode not in ("strided", "bicubic"):
            raise ValueError(f"unknown downsampling mode {self.mode!r}")


def default_kernel_size(scale: int) -> int:
    """Kernel side used for a given scale factor: 11, 15, 19 for x2, x3, x4."""
    return 4 * int(scale) + 3


def default_sigma_range(scale: int) -> tuple[float, float]:
    """Uniform sigma range ``[0.7, 2.5 s]`` truncated at the kernel half-width."""
    half = (default_kernel_size(scale) - 1) / 2
    return 0.7, min(2.5 * scale, half)


DEFAULT_RHO_RANGE = (-0.8, 0.8)


def check_kernel(k, atol: float = KERNEL_SUM_ATOL) -> np.ndarray:
    """Validate a blur kernel and return it as a float array."""
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise ShapeError(f"kernel must be square with odd side, got {k.shape}")
    if np.any(k < 0):
        raise ParameterDomainError("kernel has negative entries")
    total = k.sum()
    if abs(total - 1.0) > atol:
        raise ParameterDomainError(f"kernel sums to {total}, expected 1")
    return k


def gaussian_kernel(spec: CovarianceSpec, size: int) -> np.ndarray:
    """Evaluate the anisotropic Gaussian density on a centred ``size x size`` grid.

    The density is sampled at integer offsets from the centre pixel and then
    renormalised so the discrete kernel sums to one.
    """
    if int(size) != size or size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    cov = spec.matrix
    det = np.linalg.det(cov)
    if not det > 0:
        raise ParameterDomainError(f"covariance is not positive definite (det={det})")
    inv = np.linalg.inv(cov)
    r = (size - 1) // 2
    off = np.arange(-r, r + 1, dtype=float)
    rows, cols = np.meshgrid(off, off, indexing="ij")
    # h = (horizontal, vertical) offset
    quad = inv[0, 0] * cols**2 + 2 * inv[0, 1] * cols * rows + inv[1, 1] * rows**2
    k = np.exp(-0.5 * quad) / (2 * np.pi * np.sqrt(det))
    return k / k.sum()


def sample_covariance(rng: np.random.Generator, sigma_range=(0.7, 5.0),
                      rho_range=DEFAULT_RHO_RANGE) -> CovarianceSpec:
    """Draw ``sigma1, sigma2 ~ U(sigma_range)`` and ``rho ~ U(rho_range)`` independently."""
    s_lo, s_hi = map(float, sigma_range)
    r_lo, r_hi = map(float, rho_range)
    if not (0 < s_lo <= s_hi):
        raise ValueError(f"invalid sigma range {sigma_range}")
    if not (-1 < r_lo <= r_hi < 1):
        raise ValueError(f"invalid rho range {rho_range}")
    sigma1 = rng.uniform(s_lo, s_hi)
    sigma2 = rng.uniform(s_lo, s_hi)
    rho = rng.uniform(r_lo, r_hi)
    return CovarianceSpec(float(sigma1), float(sigma2), float(rho))


def blur(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve ``x`` with ``kernel`` under reflective (mirror, no edge repeat) padding."""
    x = np.asarray(x, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    r = kernel.shape[0] // 2
    if x.ndim != 2:
        raise ShapeError(f"image must be 2D, got shape {x.shape}")
    if r >= min(x.shape):
        raise ShapeError(f"kernel {kernel.shape} too large for image {x.shape}")
    return ndimage.convolve(x, kernel, mode="mirror")


def bicubic_resize(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bicubic resampling of a float image to ``shape = (rows, cols)``."""
    img = Image.fromarray(np.asarray(x, dtype=np.float32))
    out = img.resize((shape[1], shape[0]), resample=Image.BICUBIC)
    return np.asarray(out, dtype=float)


def degrade(x: np.ndarray, spec: DegradationSpec, rng: np.random.Generator | None = None
            ) -> np.ndarray:
    """Blur, downsample and add noise. Output is not clamped."""
    x = np.asarray(x, dtype=float)
    s = int(spec.scale)
    if x.ndim != 2 or x.shape[0] % s or x.shape[1] % s:
        raise ShapeError(f"image shape {x.shape} not divisible by scale {s}")
    blurred = blur(x, spec.kernel)
    if spec.mode == "strided":
        y = blurred[::s, ::s]
    else:
        y = bicubic_resize(blurred, (x.shape[0] // s, x.shape[1] // s))
    y = np.array(y, dtype=float)
    if spec.noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        y += rng.normal(0.0, spec.noise_sigma, size=y.shape)
    return y


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    idx = np.abs(idx)
    return np.where(idx >= n, 2 * (n - 1) - idx, idx)


def degradation_matrix(kernel: np.ndarray, scale: int, H: int, W: int) -> np.ndarray:
    """Dense matrix ``A`` with ``A @ x.ravel() == degrade(x).ravel()`` (noise-free, strided).

    Built tap by tap from the convolution sum, independently of :func:`degrade`.
    """
    kernel = check_kernel(kernel)
    if H * W > MAX_DENSE_PIXELS:
        raise CapacityError(f"{H}x{W} exceeds dense guard of {MAX_DENSE_PIXELS} pixels")
    s = int(scale)
    if H % s or W % s:
        raise ShapeError(f"({H}, {W}) not divisible by scale {s}")
    K = kernel.shape[0]
    r = K // 2
    if r >= min(H, W):
        raise ShapeError(f"kernel {kernel.shape} too large for image ({H}, {W})")
    h, w = H // s, W // s
    out_r, out_c = np.meshgrid(np.arange(h) * s, np.arange(w) * s, indexing="ij")
    row_ids = np.arange(h * w)
    A = np.zeros((h * w, H * W))
    for a in range(K):
        src_r = _reflect_index(out_r - (a - r), H)
        for b in range(K):
            src_c = _reflect_index(out_c - (b - r), W)
            np.add.at(A, (row_ids, (src_r * W + src_c).ravel()), kernel[a, b])
    return A
