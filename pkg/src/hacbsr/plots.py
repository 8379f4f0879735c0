"""Static PNG figures for run and stability reports (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .degradation import DEFAULT_RHO_RANGE, default_sigma_range, sample_covariance


def _flat(trace):
    return np.array([v for row in trace for v in row if v is not None], dtype=float)


def run_report_figures(traces: dict, out: Path, plt) -> list[Path]:
    """Loss curves, EMA weight trace and meta-weight bars."""
    out = Path(out)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    n = len(traces["L_KL"])
    ax.semilogy(np.arange(n), traces["L_KL"], label="L_KL (per outer step)")
    L_c = _flat(traces["L_C"])
    steps = np.arange(L_c.size) / max(1, L_c.size / n)
    ax.semilogy(steps, L_c, label="L_C (per inner step)")
    ax.semilogy(steps, _flat(traces["L_CIL"]), label="L_CIL", ls="--")
    contrast = _flat(traces["contrast"])
    if np.any(contrast > 0):
        ax.semilogy(steps, np.maximum(contrast, 1e-30), label="theta * contrast", lw=0.8)
    ax.set_xlabel("outer iteration")
    ax.legend(fontsize=8)
    fig.tight_layout()
    paths.append(out / "loss_curves.png")
    fig.savefig(paths[-1], dpi=100)
    plt.close(fig)

    alpha = _flat(traces["alpha"])
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(alpha, marker=".", lw=0.8)
    ax.set_ylim(0.78, 1.0)
    ax.set_xlabel("EMA update")
    ax.set_ylabel("alpha")
    fig.tight_layout()
    paths.append(out / "alpha_trace.png")
    fig.savefig(paths[-1], dpi=100)
    plt.close(fig)

    omega = np.array(traces["omega"], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3))
    bottom = np.zeros(omega.shape[0])
    for p in range(omega.shape[1]):
        ax.bar(np.arange(omega.shape[0]), omega[:, p], bottom=bottom, label=f"p={p + 1}")
        bottom += omega[:, p]
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("meta weight")
    ax.legend(fontsize=7, ncol=omega.shape[1])
    fig.tight_layout()
    paths.append(out / "meta_weights.png")
    fig.savefig(paths[-1], dpi=100)
    plt.close(fig)
    return paths


def kernel_scatter(sigmas: np.ndarray, path: Path, plt, seed: int = 0, scale: int = 2) -> Path:
    """(sigma1, sigma2) of selected kernels against plain uniform draws of equal count."""
    rng = np.random.default_rng(seed)
    ref = np.array([[c.sigma1, c.sigma2] for c in
                    (sample_covariance(rng, default_sigma_range(scale), DEFAULT_RHO_RANGE)
                     for _ in range(len(sigmas)))])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(ref[:, 0], ref[:, 1], s=10, alpha=0.5, label="random sampling")
    ax.scatter(sigmas[:, 0], sigmas[:, 1], s=10, alpha=0.7, label="contrastive sampling")
    ax.set_xlabel("sigma1")
    ax.set_ylabel("sigma2")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def stability_curve(rows, path: Path, plt) -> Path:
    theta, C = np.array(rows, dtype=float).T
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.loglog(theta, C, marker="o")
    ax.set_xlabel("theta")
    ax.set_ylabel("C(theta)")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
