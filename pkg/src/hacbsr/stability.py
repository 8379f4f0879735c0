"""Dense verification of the stability bounds for the linearised CIL objective.

For a linear degradation matrix ``A`` and a linear feature encoder ``B`` the
history-regularised objective

    L(x) = ||y - A x||^2 + theta * ||B (x - x_h)||^2

has system matrix ``M(theta) = A^T A + theta B^T B``. When ``M`` is positive
definite the minimiser ``x*`` is unique and the feature deviation obeys

    ||B (x* - x_h)|| <= C(theta) ||y - A x_h||,   C = ||B M^{-1} A^T||_2,

with ``C <= ||B|| ||A|| / lambda_min(M)`` and, when ``B^T B`` is itself
positive definite, ``C <= ||B|| ||A|| / (theta lambda_min(B^T B))``.
:func:`verify_bounds` checks all of these numerically over a grid of theta.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .degradation import (MAX_DENSE_PIXELS, default_kernel_size, default_sigma_range,
                          degradation_matrix, gaussian_kernel, sample_covariance)
from .exceptions import CapacityError, ConditioningError

PD_TOL = 1e-12
INEQ_TOL = 1e-9
MONO_TOL = 1e-12
DEFAULT_THETA_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2)


@dataclass
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    y: np.ndarray
    x_h: np.ndarray
    theta_grid: tuple = DEFAULT_THETA_GRID

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.x_h = np.asarray(self.x_h, dtype=float).ravel()
        n = self.A.shape[1]
        if n > MAX_DENSE_PIXELS:
            raise CapacityError(f"dimension {n} exceeds dense guard {MAX_DENSE_PIXELS}")
        if self.B.shape[1] != n or self.x_h.size != n or self.y.size != self.A.shape[0]:
            raise ValueError("inconsistent LinearSystem shapes")
        self.theta_grid = tuple(float(t) for t in self.theta_grid)

    def system_matrix(self, theta: float) -> np.ndarray:
        return self.A.T @ self.A + theta * (self.B.T @ self.B)

    def residual(self) -> np.ndarray:
        return self.y - self.A @ self.x_h

    def objective(self, x, theta: float) -> float:
        x = np.asarray(x, dtype=float).ravel()
        return float(np.sum((self.y - self.A @ x) ** 2)
                     + theta * np.sum((self.B @ (x - self.x_h)) ** 2))


def lambda_min(sym: np.ndarray) -> float:
    return float(linalg.eigvalsh(sym, subset_by_index=[0, 0])[0])


def _factor(sys: LinearSystem, theta: float):
    M = sys.system_matrix(theta)
    mu = lambda_min(M)
    if mu <= PD_TOL:
        raise ConditioningError(
            f"M(theta={theta}) is not positive definite: lambda_min = {mu:.3e}", lambda_min=mu)
    try:
        return linalg.cho_factor(M), mu
    except linalg.LinAlgError as exc:
        raise ConditioningError(f"Cholesky failed for theta={theta}: {exc}", lambda_min=mu)


def solve_surrogate(sys: LinearSystem, theta: float) -> np.ndarray:
    """Minimiser of the objective via the normal equations (Cholesky)."""
    cho, _ = _factor(sys, theta)
    BtB = sys.B.T @ sys.B
    rhs = sys.A.T @ sys.y + theta * BtB @ sys.x_h
    x = linalg.cho_solve(cho, rhs)
    res = np.linalg.norm(sys.system_matrix(theta) @ x - rhs)
    if res >= 1e-8 * (1 + np.linalg.norm(rhs)):
        raise ConditioningError(f"normal-equation residual {res:.3e} too large at theta={theta}")
    return x


def stability_constant(sys: LinearSystem, theta: float) -> float:
    """Spectral norm of ``B M(theta)^{-1} A^T``."""
    cho, _ = _factor(sys, theta)
    G = sys.B @ linalg.cho_solve(cho, sys.A.T)
    return float(linalg.svdvals(G)[0])


@dataclass
class StabilityRecord:
    theta: float
    mu: float
    C: float
    lhs: float
    rhs: float
    bound_upper: float
    asymptotic_bound: float
    weyl_lower: float
    pd: bool
    consistency_ok: bool
    constant_ok: bool
    weyl_ok: bool
    asymptotic_ok: bool | None


@dataclass
class StabilityReport:
    records: list[StabilityRecord] = field(default_factory=list)
    monotone_ok: bool | None = None
    decay_ok: bool | None = None
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def verdict(self) -> str:
        if self.passed:
            return f"PASS: all checks hold on {len(self.records)} theta values"
        return "FAIL: " + "; ".join(self.failures)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = ["theta", "mu", "C", "lhs", "rhs", "bound_upper", "asymptotic_bound",
                "weyl_lower", "pd", "consistency_ok", "constant_ok", "weyl_ok", "asymptotic_ok"]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in (getattr(r, c) for c in cols)])
            w.writerow([f"# monotone_ok={self.monotone_ok} decay_ok={self.decay_ok}"])
            w.writerow([f"# {self.verdict()}"])
        return path


def verify_bounds(sys: LinearSystem) -> StabilityReport:
    """Evaluate every bound on every theta of the grid; failures go into the report."""
    grid = sys.theta_grid
    if not grid:
        raise ValueError("theta_grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("theta_grid must be strictly ascending")

    report = StabilityReport()
    BtB = sys.B.T @ sys.B
    lam_b = lambda_min(BtB)
    norm_a = float(linalg.svdvals(sys.A)[0])
    norm_b = float(linalg.svdvals(sys.B)[0])
    r = sys.residual()
    r_norm = float(np.linalg.norm(r))
    informative = lam_b > PD_TOL

    for theta in grid:
        mu = lambda_min(sys.system_matrix(theta))
        weyl_lower = theta * lam_b
        weyl_ok = mu >= weyl_lower - INEQ_TOL
        asym = norm_b * norm_a / weyl_lower if informative else float("inf")
        try:
            x = solve_surrogate(sys, theta)
            C = stability_constant(sys, theta)
        except ConditioningError as exc:
            nan = float("nan")
            report.records.append(StabilityRecord(theta, mu, nan, nan, nan, nan, asym, weyl_lower,
                                                  False, False, False, weyl_ok, None))
            report.failures.append(f"theta={theta:g}: {exc}")
            continue
        lhs = float(np.linalg.norm(sys.B @ (x - sys.x_h)))
        rhs = C * r_norm
        upper = norm_b * norm_a / mu
        rec = StabilityRecord(
            theta=theta, mu=mu, C=C, lhs=lhs, rhs=rhs, bound_upper=upper,
            asymptotic_bound=asym, weyl_lower=weyl_lower, pd=True,
            consistency_ok=lhs <= rhs + INEQ_TOL,
            constant_ok=C <= upper + INEQ_TOL,
            weyl_ok=weyl_ok,
            asymptotic_ok=(rhs <= asym * r_norm + INEQ_TOL) if informative else None,
        )
        report.records.append(rec)
        if not rec.consistency_ok:
            report.failures.append(f"theta={theta:g}: consistency lhs-rhs={lhs - rhs:.3e}")
        if not rec.constant_ok:
            report.failures.append(f"theta={theta:g}: constant bound slack={upper - C:.3e}")
        if not rec.weyl_ok:
            report.failures.append(f"theta={theta:g}: Weyl slack={mu - weyl_lower:.3e}")
        if rec.asymptotic_ok is False:
            report.failures.append(f"theta={theta:g}: asymptotic bound violated")

    solved = [rec for rec in report.records if rec.pd]
    if len(grid) > 1 and len(solved) == len(grid):
        Cs = [rec.C for rec in solved]
        report.monotone_ok = all(b <= a + MONO_TOL for a, b in zip(Cs, Cs[1:]))
        if not report.monotone_ok:
            report.failures.append(f"C not nonincreasing: {Cs}")
    if len(solved) == len(grid) and grid[-1] / grid[0] >= 100 and r_norm > INEQ_TOL:
        report.decay_ok = solved[-1].lhs < solved[0].lhs
        if not report.decay_ok:
            report.failures.append(
                f"lhs did not decay: {solved[0].lhs:.3e} -> {solved[-1].lhs:.3e}")
    return report


def random_instance(rng: np.random.Generator, image_size: int = 16, scale: int = 2,
                    feature_dim: int = 512, theta_grid=DEFAULT_THETA_GRID,
                    consistent: bool = False, noise: float = 0.01) -> LinearSystem:
    """Random lab instance: Gaussian kernel, random encoder, random history and target.

    ``consistent=True`` sets ``y = A x_h`` so the residual vanishes. ``B`` is
    the training encoder's random matrix restricted to the lab image size.
    """
    from .networks import random_encoder_matrix  # deferred: pulls in torch

    cov = sample_covariance(rng, default_sigma_range(scale))
    k = gaussian_kernel(cov, default_kernel_size(scale))
    A = degradation_matrix(k, scale, image_size, image_size)
    n = image_size * image_size
    B = random_encoder_matrix(feature_dim, n, rng)
    x_h = rng.uniform(0, 1, n)
    if consistent:
        y = A @ x_h
    else:
        x_true = rng.uniform(0, 1, n)
        y = A @ x_true + noise * rng.standard_normal(A.shape[0])
    return LinearSystem(A, B, y, x_h, tuple(theta_grid))
