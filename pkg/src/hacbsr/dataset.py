"""Synthetic paired HR/LR dataset of cratered terrain.

Each HR image is a hill-shaded height field made of random craters on top of
band-limited noise. Every (image, scale) pair gets its own random anisotropic
Gaussian kernel; LR images are produced with :func:`degradation.degrade`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io
from .degradation import (DEFAULT_RHO_RANGE, DegradationSpec, default_kernel_size,
                          default_sigma_range, degrade, gaussian_kernel,
                          sample_covariance)

MANIFEST_NAME = "manifest.json"


def crater_terrain(rng: np.random.Generator, size: int, n_craters: int | None = None
                   ) -> np.ndarray:
    """Procedural grayscale terrain in ``[0.05, 0.95]``.

    Height field: multi-octave smoothed noise plus bowl-shaped craters with a
    raised rim, rendered with a fixed oblique light source.
    """
    height = np.zeros((size, size))
    for octave, amp in ((size / 4, 1.0), (size / 16, 0.35), (2.0, 0.1)):
        layer = ndimage.gaussian_filter(rng.standard_normal((size, size)), octave, mode="wrap")
        height += amp * layer / (layer.std() + 1e-12)

    if n_craters is None:
        n_craters = int(rng.integers(4, 10))
    rows, cols = np.mgrid[0:size, 0:size].astype(float)
    for _ in range(n_craters):
        cr, cc = rng.uniform(0, size, 2)
        radius = rng.uniform(0.04, 0.22) * size
        depth = rng.uniform(1.0, 3.0)
        d = np.hypot(rows - cr, cols - cc) / radius
        bowl = np.where(d < 1, d**2 - 1, 0.0)
        rim = 0.35 * np.exp(-((d - 1.0) / 0.18) ** 2)
        height += depth * (bowl + rim)

    gy, gx = np.gradient(height)
    # light from upper left
    shade = -(gx * 0.7 + gy * 0.7)
    shade = ndimage.gaussian_filter(shade, 0.6)
    img = 0.5 * shade / (np.abs(shade).max() + 1e-12) + 0.15 * height / (np.abs(height).max() + 1e-12)
    img = (img - img.min()) / (img.max() - img.min() + 1e-12)
    return 0.05 + 0.9 * img


def synthesize_dataset(n_images: int, hr_size: int, scales, noise_sigma: float, seed: int,
                       out_dir, mode: str = "strided", bits: int = 8) -> dict:
    """Generate ``n_images`` HR images and their LR versions for every scale.

    Layout::

        out_dir/hr/img_000.png
        out_dir/x{s}/lr/img_000.png
        out_dir/x{s}/kernel/img_000.csv
        out_dir/manifest.json

    Returns the manifest dict (also written to disk). Paths in the manifest are
    relative to ``out_dir``. Output bytes depend only on the arguments.
    """
    out_dir = Path(out_dir)
    scales = [int(s) for s in scales]
    if n_images < 1 or not scales:
        raise ValueError("need at least one image and one scale")
    for s in scales:
        if hr_size % s:
            raise ValueError(f"hr_size {hr_size} not divisible by scale {s}")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc

    children = np.random.SeedSequence(seed).spawn(n_images)
    records = []
    for idx, child in enumerate(children):
        rng = np.random.default_rng(child)
        name = f"img_{idx:03d}"
        hr = crater_terrain(rng, hr_size)
        # quantize once so the stored HR is exactly the degradation input
        hr_path = io.write_image(out_dir / "hr" / f"{name}.png", hr, bits=bits)
        hr = io.read_image(hr_path)
        for s in scales:
            cov = sample_covariance(rng, default_sigma_range(s), DEFAULT_RHO_RANGE)
            k = gaussian_kernel(cov, default_kernel_size(s))
            lr = degrade(hr, DegradationSpec(k, s, noise_sigma, mode), rng)
            lr_path = io.write_image(out_dir / f"x{s}" / "lr" / f"{name}.png", lr, bits=bits)
            k_path = io.write_kernel_csv(out_dir / f"x{s}" / "kernel" / f"{name}.csv", k)
            records.append({
                "id": name,
                "scale": s,
                "hr": hr_path.relative_to(out_dir).as_posix(),
                "lr": lr_path.relative_to(out_dir).as_posix(),
                "kernel": k_path.relative_to(out_dir).as_posix(),
                "covariance": cov.as_dict(),
                "noise_sigma": float(noise_sigma),
                "mode": mode,
                "seed": int(seed),
                "image_index": idx,
            })

    manifest = {
        "hr_size": int(hr_size),
        "scales": scales,
        "noise_sigma": float(noise_sigma),
        "seed": int(seed),
        "mode": mode,
        "records": records,
    }
    io.write_json(out_dir / MANIFEST_NAME, manifest)
    return manifest


def load_manifest(root) -> dict:
    root = Path(root)
    path = root / MANIFEST_NAME if root.is_dir() else root
    return io.read_json(path)
