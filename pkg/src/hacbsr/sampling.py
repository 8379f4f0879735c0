"""Contrastive kernel sampling.

Candidate Gaussian kernels are scored against a FIFO window of recently
selected kernels. The score rewards a moderate average similarity to the
window while penalising near-duplicates (high maximum similarity) and
outliers (low minimum similarity); among several random proposals the best
scoring one is kept and pushed into the window.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .degradation import (DEFAULT_RHO_RANGE, CovarianceSpec, check_kernel,
                          gaussian_kernel, sample_covariance)
from .exceptions import ShapeError


@dataclass(frozen=True)
class SimilarityWeights:
    w_pearson: float = 0.5
    w_ssim: float = 0.2
    w_feat: float = 0.3

    def __post_init__(self):
        if abs(self.w_pearson + self.w_ssim + self.w_feat - 1.0) > 1e-9:
            raise ValueError("similarity weights must sum to 1")


@dataclass(frozen=True)
class ScoreThresholds:
    tau_target: float = 0.3
    sigma_min: float = 0.3
    sigma_max: float = 0.8

    def __post_init__(self):
        if not (0 <= self.sigma_min <= self.sigma_max <= 1):
            raise ValueError("need 0 <= sigma_min <= sigma_max <= 1")


@dataclass
class SamplingConfig:
    """Proposal distribution and selection settings."""

    kernel_size: int = 11
    sigma_range: tuple = (0.7, 5.0)
    rho_range: tuple = DEFAULT_RHO_RANGE
    n_proposals: int = 16
    hinge: bool = False
    weights: SimilarityWeights = field(default_factory=SimilarityWeights)
    thresholds: ScoreThresholds = field(default_factory=ScoreThresholds)


@dataclass
class HistoryEntry:
    kernel: np.ndarray
    score: float
    descriptor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.descriptor = kernel_descriptor(self.kernel)


class KernelHistory:
    """FIFO window of ``(kernel, score)`` pairs, 20 entries by default.

    Every accepted proposal is also appended to :attr:`log` so the selection
    statistics can be dumped with :meth:`write_csv`.
    """

    def __init__(self, capacity: int = 20):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.entries: deque[HistoryEntry] = deque(maxlen=capacity)
        self.log: list[dict] = []

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def append(self, kernel: np.ndarray, score: float) -> None:
        self.entries.append(HistoryEntry(check_kernel(kernel), float(score)))

    @property
    def kernels(self) -> list[np.ndarray]:
        return [e.kernel for e in self.entries]

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = ["iteration", "J", "S_avg", "S_min", "S_max", "sigma1", "sigma2", "rho"]
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in self.log:
                writer.writerow({c: row[c] for c in cols})
        return path


def kernel_descriptor(k: np.ndarray) -> np.ndarray:
    """Six kernel statistics: peak, entropy, centre-of-mass offset, sigma_x, sigma_y, rho.

    Moments are taken with the kernel as a distribution over pixel offsets
    from the grid centre; x is the column axis.
    """
    k = np.asarray(k, dtype=float)
    p = k / k.sum()
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    r = (k.shape[0] - 1) / 2
    off = np.arange(k.shape[0]) - r
    rows, cols = np.meshgrid(off, off, indexing="ij")
    mx, my = (p * cols).sum(), (p * rows).sum()
    vx = (p * (cols - mx) ** 2).sum()
    vy = (p * (rows - my) ** 2).sum()
    cxy = (p * (cols - mx) * (rows - my)).sum()
    sx, sy = np.sqrt(vx), np.sqrt(vy)
    rho = cxy / (sx * sy) if sx * sy > 1e-12 else 0.0
    return np.array([k.max(), entropy, np.hypot(mx, my), sx, sy, rho])


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.ravel(a).astype(float)
    b = np.ravel(b).astype(float)
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
    if na < 1e-15 or nb < 1e-15:
        # correlation undefined for a constant signal
        return 1.0 if np.array_equal(a, b) else 0.0
    return float((da * db).sum() / (na * nb))


def kernel_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """SSIM between kernels with a ``min(7, K)`` box window.

    The dynamic range is the larger of the two kernel peaks, since kernels
    have no fixed intensity scale.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    win = min(7, a.shape[0])
    data_range = max(a.max(), b.max())
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = uniform_filter(a, win, mode="reflect")
    mu_b = uniform_filter(b, win, mode="reflect")
    saa = uniform_filter(a * a, win, mode="reflect") - mu_a**2
    sbb = uniform_filter(b * b, win, mode="reflect") - mu_b**2
    sab = uniform_filter(a * b, win, mode="reflect") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    pad = (win - 1) // 2
    smap = num / den
    if pad and min(smap.shape) > 2 * pad:
        smap = smap[pad:-pad, pad:-pad]
    return float(smap.mean())


def descriptor_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of :func:`kernel_descriptor` vectors, mapped to [0, 1]."""
    da, db = kernel_descriptor(a), kernel_descriptor(b)
    cos = da @ db / (np.linalg.norm(da) * np.linalg.norm(db))
    return float((1.0 + np.clip(cos, -1.0, 1.0)) / 2.0)


def similarity(k_c: np.ndarray, k_t: np.ndarray, w: SimilarityWeights = SimilarityWeights()
               ) -> float:
    """Weighted sum of Pearson correlation, SSIM and descriptor similarity."""
    k_c = np.asarray(k_c, dtype=float)
    k_t = np.asarray(k_t, dtype=float)
    if k_c.shape != k_t.shape:
        raise ShapeError(f"kernel shapes differ: {k_c.shape} vs {k_t.shape}")
    return (w.w_pearson * pearson(k_c, k_t)
            + w.w_ssim * kernel_ssim(k_c, k_t)
            + w.w_feat * descriptor_similarity(k_c, k_t))


def similarities(k_c, kernels, w: SimilarityWeights = SimilarityWeights(),
                 descriptors=None) -> np.ndarray:
    """Vectorised :func:`similarity` of one candidate against a stack of kernels."""
    k_c = np.asarray(k_c, dtype=float)
    ks = np.asarray(kernels, dtype=float)
    if ks.ndim != 3 or ks.shape[1:] != k_c.shape:
        raise ShapeError(f"kernel shapes differ: {k_c.shape} vs {ks.shape[1:]}")
    n = ks.shape[0]

    a = k_c.ravel() - k_c.mean()
    B = ks.reshape(n, -1)
    B = B - B.mean(axis=1, keepdims=True)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(B, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (B @ a) / (na * nb)
    flat = (na < 1e-15) | (nb < 1e-15)
    if np.any(flat):
        same = np.all(ks.reshape(n, -1) == k_c.ravel(), axis=1)
        r = np.where(flat, same.astype(float), r)

    win = min(7, k_c.shape[0])
    size = (1, win, win)
    data_range = np.maximum(ks.max(axis=(1, 2)), k_c.max())[:, None, None]
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    A = np.broadcast_to(k_c, ks.shape)
    mu_a = uniform_filter(A, size, mode="reflect")
    mu_b = uniform_filter(ks, size, mode="reflect")
    saa = uniform_filter(A * A, size, mode="reflect") - mu_a**2
    sbb = uniform_filter(ks * ks, size, mode="reflect") - mu_b**2
    sab = uniform_filter(A * ks, size, mode="reflect") - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)
            / ((mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)))
    pad = (win - 1) // 2
    if pad and min(smap.shape[1:]) > 2 * pad:
        smap = smap[:, pad:-pad, pad:-pad]
    ss = smap.mean(axis=(1, 2))

    dc = kernel_descriptor(k_c)
    D = np.array([kernel_descriptor(k) for k in ks]) if descriptors is None else np.asarray(descriptors)
    cos = D @ dc / (np.linalg.norm(D, axis=1) * np.linalg.norm(dc))
    fs = (1.0 + np.clip(cos, -1.0, 1.0)) / 2.0

    return w.w_pearson * r + w.w_ssim * ss + w.w_feat * fs


def similarity_stats(k_c, history: KernelHistory, w: SimilarityWeights = SimilarityWeights()):
    """``(S_avg, S_min, S_max)`` of ``k_c`` against the window, or ``None`` if empty."""
    if len(history) == 0:
        return None
    sims = similarities(k_c, history.kernels, w, [e.descriptor for e in history])
    return float(sims.mean()), float(sims.min()), float(sims.max())


def score_from_stats(s_avg: float, s_min: float, s_max: float,
                     th: ScoreThresholds = ScoreThresholds(), hinge: bool = False) -> float:
    hi = s_max - th.sigma_max
    lo = th.sigma_min - s_min
    if hinge:
        hi, lo = max(hi, 0.0), max(lo, 0.0)
    return -abs(s_avg - th.tau_target) - hi - lo


def candidate_score(k_c, history: KernelHistory, th: ScoreThresholds = ScoreThresholds(),
                    w: SimilarityWeights = SimilarityWeights(), hinge: bool = False) -> float:
    """Selection score J of a candidate; 0 for an empty window."""
    stats = similarity_stats(k_c, history, w)
    if stats is None:
        return 0.0
    return score_from_stats(*stats, th=th, hinge=hinge)


def select_candidate(candidates, history: KernelHistory, config: SamplingConfig | None = None):
    """Index, J and ``(S_avg, S_min, S_max)`` of the best candidate (first wins ties).

    With an empty window every J is 0, so the first candidate is chosen and
    the stats are NaN.
    """
    config = config or SamplingConfig()
    if len(candidates) == 0:
        raise ValueError("no candidates")
    if len(history) == 0:
        return 0, 0.0, (np.nan, np.nan, np.nan)
    best = None
    for i, k in enumerate(candidates):
        stats = similarity_stats(k, history, config.weights)
        J = score_from_stats(*stats, th=config.thresholds, hinge=config.hinge)
        if best is None or J > best[1]:
            best = (i, J, stats)
    return best


def propose_kernel(history: KernelHistory, rng: np.random.Generator,
                   n_proposals: int | None = None, config: SamplingConfig | None = None,
                   iteration: int = 0) -> tuple[np.ndarray, CovarianceSpec]:
    """Draw proposals, keep the highest-J one, push it into ``history``.

    Against an empty window only one proposal is drawn, since it is accepted
    regardless.
    """
    config = config or SamplingConfig()
    n = config.n_proposals if n_proposals is None else n_proposals
    if n < 1:
        raise ValueError("n_proposals must be >= 1")
    if len(history) == 0:
        n = 1
    covs = [sample_covariance(rng, config.sigma_range, config.rho_range) for _ in range(n)]
    kernels = [gaussian_kernel(c, config.kernel_size) for c in covs]
    i, J, (s_avg, s_min, s_max) = select_candidate(kernels, history, config)
    history.append(kernels[i], 0.0 if np.isnan(s_avg) else s_avg)
    history.log.append({"iteration": iteration, "J": J, "S_avg": s_avg, "S_min": s_min,
                        "S_max": s_max, **covs[i].as_dict()})
    return kernels[i], covs[i]


def sample_batch(history: KernelHistory, rng: np.random.Generator, T: int = 5,
                 n_proposals: int | None = None, config: SamplingConfig | None = None,
                 iteration: int = 0) -> list[np.ndarray]:
    """``T`` successive :func:`propose_kernel` selections."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return [propose_kernel(history, rng, n_proposals, config, iteration)[0] for _ in range(T)]
