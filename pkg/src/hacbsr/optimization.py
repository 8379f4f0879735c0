"""Alternating kernel learning / contrastive image learning.

One outer iteration:

1. draw ``T`` kernels with contrastive sampling and take one Adam step of the
   kernel generator towards them (kernel learning, KL);
2. generate the current kernel and run ``P`` Adam steps of the image
   generator on the data-fidelity loss plus the history contrastive term,
   blending the history parameters towards the current ones with a
   loss-adaptive EMA;
3. weight the ``P`` inner losses and take one Adam step of the kernel
   generator on the weighted (meta) loss.

The meta gradient is first order: the inner-loop SR images are stored and the
loss is re-evaluated as a function of the kernel generator only.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .degradation import default_kernel_size, default_sigma_range
from .exceptions import DivergenceError, ShapeError
from .networks import (FeatureEncoder, NoiseSeeds, blur_downsample, build_image_net,
                       build_kernel_net, generate_image, generate_kernel)
from .sampling import KernelHistory, SamplingConfig, sample_batch

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    n_iters: int = 300
    inner_steps: int = 5
    lr_x: float = 0.005
    lr_k_kl: float = 0.5
    lr_k_cil: float = 0.5
    theta_h: float = 0.4
    scale: int = 2
    batch_T: int = 5
    n_proposals: int = 16
    alpha_range: tuple = (0.8, 0.99)
    loss_range: tuple = (1e-6, 1e-2)
    history_update_period: int = 1
    seed: int = 0
    kernel_size: int | None = None
    sigma_range: tuple | None = None
    rho_range: tuple = (-0.8, 0.8)
    unet_width: int = 32
    unet_depth: int = 3
    z_k_dim: int = 64
    kernel_hidden: int = 1000
    kernel_logit_scale: float = 0.3
    feature_dim: int = 512
    encoder: str = "linear-random"
    contrastive_sampling: bool = True
    history_contrast: bool = True
    dtype: str = "float32"
    divergence_threshold: float = 1e6
    snapshot_every: int = 10

    def __post_init__(self):
        if min(self.n_iters, self.inner_steps, self.batch_T, self.n_proposals) < 1:
            raise ValueError("n_iters, inner_steps, batch_T and n_proposals must be >= 1")
        if min(self.lr_x, self.lr_k_kl, self.lr_k_cil) <= 0:
            raise ValueError("learning rates must be positive")
        if self.theta_h < 0:
            raise ValueError("theta_h must be >= 0")
        if not self.alpha_range[0] < self.alpha_range[1]:
            raise ValueError("alpha_range must be increasing")
        if not self.loss_range[0] < self.loss_range[1]:
            raise ValueError("loss_range must be increasing")
        if self.history_update_period < 1:
            raise ValueError("history_update_period must be >= 1")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")
        self.alpha_range = tuple(self.alpha_range)
        self.loss_range = tuple(self.loss_range)
        self.rho_range = tuple(self.rho_range)
        if self.sigma_range is not None:
            self.sigma_range = tuple(self.sigma_range)

    @property
    def K(self) -> int:
        return self.kernel_size or default_kernel_size(self.scale)

    @property
    def effective_theta(self) -> float:
        return self.theta_h if self.history_contrast else 0.0

    def sampling_config(self) -> SamplingConfig:
        return SamplingConfig(
            kernel_size=self.K,
            sigma_range=self.sigma_range or default_sigma_range(self.scale),
            rho_range=self.rho_range,
            n_proposals=self.n_proposals if self.contrastive_sampling else 1,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunReport:
    config: dict
    L_KL: list = field(default_factory=list)
    L_C: list = field(default_factory=list)
    L_CIL: list = field(default_factory=list)
    contrast: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    omega: list = field(default_factory=list)
    J: list = field(default_factory=list)
    L_meta: list = field(default_factory=list)
    kernel_snapshots: dict = field(default_factory=dict)
    wall_time: float = 0.0
    completed_iters: int = 0
    status: str = "running"
    final_metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class TrainState:
    """Parameters, history copy, optimizers and kernel window of one run."""

    def __init__(self, config: TrainConfig, lr_shape):
        self.config = config
        dtype = DTYPES[config.dtype]
        s = config.scale
        self.lr_shape = tuple(lr_shape)
        self.sr_shape = (lr_shape[0] * s, lr_shape[1] * s)
        self.noise = NoiseSeeds.create(config.seed, self.sr_shape, config.z_k_dim, dtype)
        self.image_net = build_image_net(config.seed + 1, config.unet_width, config.unet_depth,
                                         dtype)
        self.kernel_net = build_kernel_net(config.seed + 2, config.K, config.z_k_dim,
                                           config.kernel_hidden, dtype, config.kernel_logit_scale)
        self.history_net = copy.deepcopy(self.image_net)
        for p in self.history_net.parameters():
            p.requires_grad_(False)
        self.encoder = FeatureEncoder(self.sr_shape[0] * self.sr_shape[1], config.encoder,
                                      config.feature_dim, seed=config.seed + 3, dtype=dtype)
        self.opt_x = torch.optim.Adam(self.image_net.parameters(), lr=config.lr_x)
        self.opt_k_kl = torch.optim.Adam(self.kernel_net.parameters(), lr=config.lr_k_kl)
        self.opt_k_cil = torch.optim.Adam(self.kernel_net.parameters(), lr=config.lr_k_cil)
        self.kernel_history = KernelHistory(20)
        self.rng = np.random.default_rng(config.seed)
        self.iteration = 0
        self.inner_step = 0
        self.dtype = dtype

    @property
    def z_x(self):
        return self.noise.z_x

    @property
    def z_k(self):
        return self.noise.z_k

    def current_kernel(self) -> torch.Tensor:
        return generate_kernel(self.kernel_net, self.z_k)

    def current_image(self) -> torch.Tensor:
        return generate_image(self.image_net, self.z_x)


def _check_finite(value: float, limit: float, what: str, iteration: int):
    if not np.isfinite(value) or abs(value) > limit:
        raise DivergenceError(f"{what} diverged at iteration {iteration}: {value}",
                              iteration=iteration)


def kernel_loss(kernel, batch) -> torch.Tensor:
    """Sum over the batch of squared Frobenius distances to the generated kernel."""
    targets = torch.stack([torch.as_tensor(k, dtype=kernel.dtype) for k in batch])
    return ((kernel.unsqueeze(0) - targets) ** 2).sum()


def kl_step(state: TrainState, batch) -> float:
    """One Adam step of the kernel generator towards the sampled kernels."""
    if len(batch) == 0:
        raise ValueError("kernel batch is empty")
    state.opt_k_kl.zero_grad()
    loss = kernel_loss(state.current_kernel(), batch)
    value = loss.item()
    _check_finite(value, state.config.divergence_threshold, "L_KL", state.iteration)
    loss.backward()
    state.opt_k_kl.step()
    return value


def data_loss(x, kernel, y, scale: int) -> torch.Tensor:
    return ((y - blur_downsample(x, kernel, scale)) ** 2).sum()


def contrast_loss(x, x_hist, encoder) -> torch.Tensor:
    return ((encoder(x) - encoder(x_hist)) ** 2).sum()


def cil_loss(image_net, history_net, z_x, kernel, y, theta_h: float, encoder, scale: int,
             return_parts: bool = False):
    """``(L_CIL, L_C)`` for the current image parameters.

    The history branch is evaluated without gradient. With ``return_parts``
    the SR image and the unweighted contrastive term are appended.
    """
    y = torch.as_tensor(y, dtype=z_x.dtype)
    x = generate_image(image_net, z_x)
    if x.shape != (y.shape[0] * scale, y.shape[1] * scale):
        raise ShapeError(f"SR shape {tuple(x.shape)} incompatible with LR {tuple(y.shape)}")
    L_c = data_loss(x, kernel, y, scale)
    if theta_h > 0:
        with torch.no_grad():
            x_hist = generate_image(history_net, z_x)
        contrast = contrast_loss(x, x_hist, encoder)
    else:
        contrast = torch.zeros((), dtype=L_c.dtype)
    L_cil = L_c + theta_h * contrast
    if return_parts:
        return L_cil, L_c, x, contrast
    return L_cil, L_c


def adaptive_alpha(L_current: float, alpha_range=(0.8, 0.99), loss_range=(1e-6, 1e-2)) -> float:
    """History weight linearly decreasing with the clamped loss."""
    a_min, a_max = alpha_range
    l_min, l_max = loss_range
    L = min(max(float(L_current), l_min), l_max)
    return a_max - (L - l_min) / (l_max - l_min) * (a_max - a_min)


@torch.no_grad()
def adaptive_history_update(history_params, current_params, alpha: float) -> None:
    """In-place ``h <- alpha h + (1 - alpha) x`` over matching parameter lists."""
    history_params = list(history_params)
    current_params = list(current_params)
    if len(history_params) != len(current_params):
        raise ShapeError("parameter lists differ in length")
    for h, x in zip(history_params, current_params):
        if h.shape != x.shape:
            raise ShapeError(f"parameter shapes differ: {tuple(h.shape)} vs {tuple(x.shape)}")
        h.mul_(alpha).add_(x, alpha=1.0 - alpha)


def cil_inner_loop(state: TrainState, kernel, y):
    """``P`` image-generator updates with a fixed (detached) kernel.

    Returns ``(L_CIL list, L_C list, SR images, contrast terms, alphas)``;
    the images are those that produced each loss, for the meta step.
    """
    cfg = state.config
    kernel = kernel.detach()
    theta = cfg.effective_theta
    L_cil_all, L_c_all, images, contrasts, alphas = [], [], [], [], []
    for _ in range(cfg.inner_steps):
        state.opt_x.zero_grad()
        L_cil, L_c, x, contrast = cil_loss(state.image_net, state.history_net, state.z_x, kernel,
                                           y, theta, state.encoder, cfg.scale, return_parts=True)
        v_cil, v_c = L_cil.item(), L_c.item()
        _check_finite(v_cil, cfg.divergence_threshold, "L_CIL", state.iteration)
        L_cil.backward()
        state.inner_step += 1
        alpha = None
        if state.inner_step % cfg.history_update_period == 0:
            alpha = adaptive_alpha(v_c, cfg.alpha_range, cfg.loss_range)
            adaptive_history_update(state.history_net.parameters(),
                                    state.image_net.parameters(), alpha)
        state.opt_x.step()
        L_cil_all.append(v_cil)
        L_c_all.append(v_c)
        images.append(x.detach())
        contrasts.append(float(contrast.detach()))
        alphas.append(alpha)
    return L_cil_all, L_c_all, images, contrasts, alphas


def meta_weights(core_losses) -> np.ndarray:
    """Importance weights of the inner steps from their data-fidelity losses.

    Losses are shifted by their minimum and normalised to sum to one
    (``pi``); the weight is ``-(1 - pi)^2 log(pi + 1e-3)``, so the lowest-loss
    step gets the largest weight. Equal losses give uniform weights of one.
    """
    L = np.asarray(core_losses, dtype=float)
    if L.size < 1:
        raise ValueError("need at least one loss")
    shifted = L - L.min()
    denom = shifted.sum()
    if denom < 1e-12:
        return np.ones_like(L)
    pi = shifted / denom
    return -((1.0 - pi) ** 2) * np.log(pi + 1e-3)


def meta_loss(kernel_net, z_k, y, images, contrasts, weights, theta_h: float, scale: int):
    """``(1/P) sum_p w_p L_CIL_p`` as a function of the kernel generator only."""
    kernel = generate_kernel(kernel_net, z_k)
    y = torch.as_tensor(y, dtype=kernel.dtype)
    total = torch.zeros((), dtype=kernel.dtype)
    for w, x, c in zip(weights, images, contrasts):
        total = total + float(w) * (data_loss(x, kernel, y, scale) + theta_h * c)
    return total / len(images)


def meta_step(state: TrainState, y, images, contrasts, weights) -> float:
    if not (len(images) == len(contrasts) == len(weights)):
        raise ValueError("images, contrasts and weights must have equal length")
    cfg = state.config
    state.opt_k_cil.zero_grad()
    loss = meta_loss(state.kernel_net, state.z_k, y, images, contrasts, weights,
                     cfg.effective_theta, cfg.scale)
    value = loss.item()
    _check_finite(value, cfg.divergence_threshold, "L_meta", state.iteration)
    loss.backward()
    state.opt_k_cil.step()
    return value


def _configure_threads(threads: int | None = None):
    """Torch intra-op threads: explicit value, else ``HACBSR_THREADS``, else 1."""
    n = threads if threads is not None else int(os.environ.get("HACBSR_THREADS", "1"))
    torch.set_num_threads(max(1, int(n)))


@dataclass
class RunResult:
    image: np.ndarray
    kernel: np.ndarray
    report: RunReport
    state: TrainState


def run_hacbsr(y, config: TrainConfig, callback=None, threads: int | None = None) -> RunResult:
    """Blind SR of a single LR image ``y`` (2D array in [0, 1]).

    ``callback(state, report)`` is called after every outer iteration. On
    divergence a :class:`DivergenceError` is raised whose ``report`` holds
    the partial traces. Single-threaded by default so runs are reproducible.
    """
    _configure_threads(threads)
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise ShapeError(f"LR image must be 2D, got {y.shape}")
    if (config.K // 2) >= min(y.shape) * config.scale:
        raise ShapeError("kernel larger than SR image")
    state = TrainState(config, y.shape)
    y_t = torch.as_tensor(y, dtype=state.dtype)
    sampling = config.sampling_config()
    report = RunReport(config=config.to_dict())
    start = time.perf_counter()
    try:
        for i in range(config.n_iters):
            state.iteration = i
            n_log = len(state.kernel_history.log)
            batch = sample_batch(state.kernel_history, state.rng, config.batch_T,
                                 config=sampling, iteration=i)
            J = [row["J"] for row in state.kernel_history.log[n_log:]]
            L_kl = kl_step(state, batch)
            k_cil = state.current_kernel().detach()
            L_cil, L_c, images, contrasts, alphas = cil_inner_loop(state, k_cil, y_t)
            omega = meta_weights(L_c)
            L_m = meta_step(state, y_t, images, contrasts, omega)

            report.L_KL.append(L_kl)
            report.L_C.append(L_c)
            report.L_CIL.append(L_cil)
            report.contrast.append([config.effective_theta * c for c in contrasts])
            report.alpha.append(alphas)
            report.omega.append(omega.tolist())
            report.J.append(J)
            report.L_meta.append(L_m)
            if i % config.snapshot_every == 0 or i == config.n_iters - 1:
                report.kernel_snapshots[str(i)] = k_cil.double().numpy().tolist()
            report.completed_iters = i + 1
            if callback is not None:
                callback(state, report)
    except DivergenceError as exc:
        report.status = "diverged"
        report.wall_time = time.perf_counter() - start
        exc.report = report
        raise
    report.status = "completed"
    report.wall_time = time.perf_counter() - start
    with torch.no_grad():
        image = state.current_image().double().numpy()
        kernel = state.current_kernel().double().numpy()
    return RunResult(image, kernel, report, state)
