"""Unsupervised blind super-resolution with contrastive kernel sampling and
history-augmented contrastive image learning.

The numpy side (degradation, sampling, metrics, stability) imports without
torch; the generators and the training loop live in ``hacbsr.networks`` and
``hacbsr.optimization``.
"""

__version__ = "0.1.0"

from .degradation import (CovarianceSpec, DegradationSpec, degradation_matrix, degrade,
                          gaussian_kernel, sample_covariance)
from .exceptions import (CapacityError, ConditioningError, DivergenceError, HACBSRError,
                         ParameterDomainError, ShapeError)
from .metrics import kernel_psnr, psnr, ssim
from .sampling import KernelHistory, candidate_score, propose_kernel, sample_batch, similarity
from .stability import LinearSystem, solve_surrogate, stability_constant, verify_bounds

__all__ = [
    "CovarianceSpec", "DegradationSpec", "degradation_matrix", "degrade", "gaussian_kernel",
    "sample_covariance", "CapacityError", "ConditioningError", "DivergenceError", "HACBSRError",
    "ParameterDomainError", "ShapeError", "kernel_psnr", "psnr", "ssim", "KernelHistory",
    "candidate_score", "propose_kernel", "sample_batch", "similarity", "LinearSystem",
    "solve_surrogate", "stability_constant", "verify_bounds",
]
