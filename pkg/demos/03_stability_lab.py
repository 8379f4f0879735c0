"""Numerical check of the stability bounds of the linearised objective.

For a dense degradation matrix A and a random linear encoder B, the
regularised least-squares problem has system matrix A^T A + theta B^T B.
This script verifies the consistency and constant bounds over a theta grid,
then shows what goes wrong when the encoder has fewer features than pixels.

    python demos/03_stability_lab.py
"""

from pathlib import Path

import numpy as np

from hacbsr.stability import lambda_min, random_instance, verify_bounds

OUT = Path(__file__).parent / "output" / "stability"

rng = np.random.default_rng(0)
sys = random_instance(rng, image_size=16, scale=2, feature_dim=512)
report = verify_bounds(sys)
print(f"{'theta':>8} {'mu':>10} {'C':>10} {'lhs':>10} {'rhs':>10}")
for r in report.records:
    print(f"{r.theta:8.2g} {r.mu:10.4g} {r.C:10.4g} {r.lhs:10.4g} {r.rhs:10.4g}")
print(report.verdict())
report.write_csv(OUT / "d512.csv")

# 128 features cannot span 256 pixels, and A (64 rows) cannot fill the gap
thin = random_instance(rng, image_size=16, scale=2, feature_dim=128)
print(f"d=128: lambda_min(A^T A + B^T B) = {lambda_min(thin.system_matrix(1.0)):.2e}")
print(verify_bounds(thin).verdict()[:120], "...")
