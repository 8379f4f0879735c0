"""Generators and the frozen feature encoder.

* :class:`UNet` maps a fixed noise field to the SR image (deep image prior).
* :class:`KernelMLP` maps a fixed noise vector to a kernel on the simplex.
* :class:`FeatureEncoder` is a frozen linear map used by the contrastive term.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ShapeError

CHECKPOINT_VERSION = 1


def _conv_block(cin, cout, stride=1):
    return nn.Sequential(
        nn.ReflectionPad2d(1),
        nn.Conv2d(cin, cout, 3, stride=stride),
        nn.BatchNorm2d(cout),
        nn.LeakyReLU(0.2),
    )


class UNet(nn.Module):
    """Encoder-decoder with skip connections, ``depth`` resolution levels.

    Decoder features are bilinearly resized to the matching encoder level, so
    any input size works. Output passes through a sigmoid.
    """

    def __init__(self, in_channels=1, width=32, depth=3, skip_channels=4):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        self.inc = nn.Sequential(_conv_block(in_channels, width), _conv_block(width, width))
        self.downs = nn.ModuleList(
            nn.Sequential(_conv_block(width, width, stride=2), _conv_block(width, width))
            for _ in range(depth - 1))
        self.skips = nn.ModuleList(
            nn.Sequential(nn.Conv2d(width, skip_channels, 1), nn.BatchNorm2d(skip_channels),
                          nn.LeakyReLU(0.2))
            for _ in range(depth - 1))
        self.ups = nn.ModuleList(
            nn.Sequential(_conv_block(width + skip_channels, width), _conv_block(width, width))
            for _ in range(depth - 1))
        self.head = nn.Conv2d(width, 1, 1)

    def forward(self, z):
        feats = [self.inc(z)]
        for down in self.downs:
            feats.append(down(feats[-1]))
        h = feats[-1]
        for level in reversed(range(self.depth - 1)):
            skip = feats[level]
            h = F.interpolate(h, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            h = self.ups[level](torch.cat([h, self.skips[level](skip)], dim=1))
        return torch.sigmoid(self.head(h))


class KernelMLP(nn.Module):
    """Two-layer fully connected kernel generator with a softmax output head.

    Hidden units are ReLU6 and the logits are multiplied by
    ``logit_scale / hidden`` (mean-field scaling); without that, Adam steps of
    size 0.5 saturate the softmax into a delta kernel after a single update.
    """

    def __init__(self, kernel_size, z_dim=64, hidden=1000, logit_scale=0.3):
        super().__init__()
        if logit_scale <= 0:
            raise ValueError("logit_scale must be positive")
        self.kernel_size = kernel_size
        self.logit_scale = float(logit_scale)
        self.fc1 = nn.Linear(z_dim, hidden)
        self.fc2 = nn.Linear(hidden, kernel_size * kernel_size)

    def forward(self, z):
        logits = self.fc2(F.relu6(self.fc1(z))) * (self.logit_scale / self.fc1.out_features)
        return F.softmax(logits, dim=-1).view(self.kernel_size, self.kernel_size)


def n_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def random_encoder_matrix(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``d x n`` matrix with i.i.d. ``N(0, 1/d)`` entries, checked to have full rank."""
    B = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, n))
    if np.linalg.svd(B, compute_uv=False)[-1] <= 0:
        raise ValueError("random encoder matrix is rank deficient")
    return B


class FeatureEncoder(nn.Module):
    """Frozen linear feature map ``f(x) = B vec(x)``.

    ``kind`` is ``"linear-random"`` (Gaussian ``B`` with ``dim`` rows),
    ``"identity"``, or ``"external"`` (a caller-supplied callable, assumed frozen).
    """

    def __init__(self, n_pixels, kind="linear-random", dim=512, seed=0, fn=None,
                 dtype=torch.float32):
        super().__init__()
        self.kind = kind
        self.n_pixels = n_pixels
        self.fn = fn
        if kind == "linear-random":
            B = random_encoder_matrix(dim, n_pixels, np.random.default_rng(seed))
            self.register_buffer("B", torch.as_tensor(B, dtype=dtype))
        elif kind == "identity":
            self.B = None
        elif kind == "external":
            if fn is None:
                raise ValueError("external encoder needs fn")
            self.B = None
        else:
            raise ValueError(f"unknown encoder kind {kind!r}")

    def forward(self, x):
        v = x.reshape(-1)
        if v.numel() != self.n_pixels:
            raise ShapeError(f"encoder expects {self.n_pixels} pixels, got {v.numel()}")
        if self.kind == "linear-random":
            return self.B.to(v.dtype) @ v
        if self.kind == "identity":
            return v
        return self.fn(x)


def encode(encoder: FeatureEncoder, x):
    return encoder(x)


@dataclass
class NoiseSeeds:
    z_x: torch.Tensor
    z_k: torch.Tensor
    seed: int

    @classmethod
    def create(cls, seed: int, sr_shape, z_dim=64, dtype=torch.float32):
        """``z_x ~ U[0, 0.1]`` at SR resolution, ``z_k ~ N(0, 1)`` of length ``z_dim``."""
        g = torch.Generator().manual_seed(int(seed))
        z_x = 0.1 * torch.rand((1, 1, *sr_shape), generator=g, dtype=torch.float64)
        z_k = torch.randn(z_dim, generator=g, dtype=torch.float64)
        return cls(z_x.to(dtype), z_k.to(dtype), int(seed))


def build_image_net(seed: int, width=32, depth=3, dtype=torch.float32) -> UNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = UNet(width=width, depth=depth)
    return net.to(dtype)


def build_kernel_net(seed: int, kernel_size: int, z_dim=64, hidden=1000,
                     dtype=torch.float32, logit_scale=0.3) -> KernelMLP:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = KernelMLP(kernel_size, z_dim, hidden, logit_scale)
    return net.to(dtype)


def generate_image(net: UNet, z_x) -> torch.Tensor:
    """SR estimate, shape ``(sH, sW)`` with values in (0, 1)."""
    if z_x.ndim != 4 or z_x.shape[:2] != (1, net.inc[0][1].in_channels):
        raise ShapeError(f"noise field has shape {tuple(z_x.shape)}")
    return net(z_x)[0, 0]


def generate_kernel(net: KernelMLP, z_k) -> torch.Tensor:
    return net(z_k)


def blur_downsample(x, kernel, scale: int):
    """Torch counterpart of :func:`degradation.degrade` (noise-free, strided)."""
    K = kernel.shape[-1]
    r = K // 2
    H, W = x.shape[-2:]
    if r >= min(H, W):
        raise ShapeError(f"kernel {tuple(kernel.shape)} too large for image {(H, W)}")
    xp = F.pad(x.reshape(1, 1, H, W), (r, r, r, r), mode="reflect")
    weight = torch.flip(kernel, dims=(0, 1)).reshape(1, 1, K, K).to(x.dtype)
    return F.conv2d(xp, weight, stride=scale)[0, 0]


def save_checkpoint(path, image_net, kernel_net, history_net, noise: NoiseSeeds,
                    iteration: int, extra=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "version": CHECKPOINT_VERSION,
        "image_net": image_net.state_dict(),
        "kernel_net": kernel_net.state_dict(),
        "history_net": history_net.state_dict(),
        "z_x": noise.z_x,
        "z_k": noise.z_k,
        "seed": noise.seed,
        "iteration": int(iteration),
        "extra": extra or {},
    }, path)
    return path


def load_checkpoint(path) -> dict:
    ckpt = torch.load(Path(path), map_location="cpu", weights_only=False)
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ckpt.get('version')}")
    return ckpt
