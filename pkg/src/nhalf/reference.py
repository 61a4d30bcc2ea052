"""Full-precision reference operations and forward pass.

This module is the semantic ground truth: the fusion compiler and the
integer engine are both checked against it. Everything here runs in float64,
strictly more precise than any compiled threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError, DomainError

if TYPE_CHECKING:
    from .model import Checkpoint


@dataclass(frozen=True)
class ActivationParams:
    """Per-channel activation/normalization parameters of one block.

    gamma, beta, mu, sigma_sq are the batch-norm scale, shift, mean and
    variance; prelu_slope is the PReLU negative-side slope (scalar broadcast
    allowed); clip is the symmetric HardTanh bound.
    """

    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma_sq: np.ndarray
    prelu_slope: np.ndarray
    epsilon: float = 1e-5
    clip: int = 31

    def __post_init__(self) -> None:
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        channels = gamma.shape[0]
        for name in ("gamma", "beta", "mu", "sigma_sq", "prelu_slope"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            if arr.shape == (1,) and channels > 1:
                arr = np.broadcast_to(arr, (channels,)).copy()
            if arr.shape != (channels,):
                raise DomainError(f"{name} must have {channels} channels, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.sigma_sq < 0):
            raise DomainError("sigma_sq must be >= 0")
        if not (self.epsilon > 0):
            raise DomainError("epsilon must be > 0")
        if self.clip < 1:
            raise DomainError("clip must be >= 1")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def sign(x):
    """+1 if x >= 0 else -1, elementwise; 0 maps to +1."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("sign requires finite input")
    out = np.where(arr >= 0, 1, -1)
    return int(out) if np.isscalar(x) or arr.ndim == 0 else out.astype(np.int64)


def hardtanh(x, clip: int):
    """Clamp to the symmetric range [-clip, +clip]."""
    if clip < 1:
        raise DomainError("clip must be >= 1")
    return np.minimum(np.maximum(x, -float(clip)), float(clip))


def prelu(x, slope):
    """x for x >= 0, slope * x otherwise."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slope * x)


def batchnorm(x, p: ActivationParams, channel: int):
    """(x - mu) / sqrt(sigma_sq + epsilon) * gamma + beta for one channel."""
    denom = np.sqrt(p.sigma_sq[channel] + p.epsilon)
    return (np.asarray(x, dtype=np.float64) - p.mu[channel]) / denom * p.gamma[channel] + p.beta[channel]


def channel_scale_offset(p: ActivationParams, channel: int) -> tuple[float, float]:
    """Affine form of batchnorm: scale = gamma/sqrt(sigma_sq+eps), offset = beta - mu*scale."""
    denom = float(np.sqrt(p.sigma_sq[channel] + p.epsilon))
    scale = float(p.gamma[channel]) / denom
    offset = float(p.beta[channel]) - float(p.mu[channel]) * float(p.gamma[channel]) / denom
    return scale, offset


def func_reference(x, p: ActivationParams, channel: int):
    """Piecewise-affine form of batchnorm(prelu(hardtanh(x))).

    Saturates to hi/lo constants beyond +-clip; inside the range it is
    scale*x + offset for x >= 0 and slope*scale*x + offset for x < 0.
    """
    scale, offset = channel_scale_offset(p, channel)
    slope = float(p.prelu_slope[channel])
    clip = p.clip
    hi_value = clip * scale + offset
    lo_value = slope * (-clip) * scale + offset
    xv = np.asarray(x, dtype=np.float64)
    pos = scale * xv + offset
    neg = slope * scale * xv + offset
    out = np.where(
        xv > clip, hi_value, np.where(xv < -clip, lo_value, np.where(xv >= 0, pos, neg))
    )
    return float(out) if np.isscalar(x) or xv.ndim == 0 else out


def _conv_direct(x: np.ndarray, weights: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Direct sliding-window +-1 convolution in float64 (pad value -1)."""
    if x.ndim == 2:  # (C, L) -> (C, 1, L)
        x = x[:, None, :]
        weights = weights[:, :, None, :]
        pad = (0, padding)
    else:
        pad = (padding, padding)
    c, h, w = x.shape
    padded = np.full((c, h + 2 * pad[0], w + 2 * pad[1]), -1.0, dtype=np.float64)
    padded[:, pad[0] : pad[0] + h, pad[1] : pad[1] + w] = x
    kh, kw = weights.shape[2], weights.shape[3]
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    out = np.einsum("chwij,ocij->ohw", windows, weights)
    return out[:, 0, :] if out.shape[1] == 1 and kh == 1 else out


def _pool_direct(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    if x.ndim == 2:
        win = np.lib.stride_tricks.sliding_window_view(x, window, axis=1)
        return win[:, ::stride].max(axis=-1)
    win = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(1, 2))
    return win[:, ::stride, ::stride].max(axis=(-2, -1))


@dataclass
class BlockTrace:
    """Every intermediate of one block, for differential testing."""

    conv_out: np.ndarray
    pool_out: np.ndarray
    activated: np.ndarray | None  # post batchnorm; None for the half block
    binary: np.ndarray | None  # +-1 map fed to the next block; None for half


@dataclass
class ReferenceTrace:
    scores: np.ndarray
    predicted: int
    blocks: list[BlockTrace] = field(default_factory=list)


def reference_forward(image: np.ndarray, checkpoint: "Checkpoint") -> ReferenceTrace:
    """Float-latent forward pass over all blocks.

    Per full block: conv with sign(latent weights) -> maxpool -> hardtanh ->
    prelu -> batchnorm -> sign. The final half block runs conv -> pool and
    sums each class channel over its positions.
    """
    config = checkpoint.config
    x = np.asarray(image, dtype=np.float64)
    expected = (1, *config.input_size)
    if x.shape != expected:
        raise ConfigError(f"input shape {x.shape} does not match {expected}")
    if not np.all(np.abs(x) == 1):
        raise DomainError("reference input must be +-1")

    plan = checkpoint.plan()
    trace = ReferenceTrace(scores=np.zeros(config.class_count), predicted=0)
    for i, (spec, block) in enumerate(zip(config.blocks, checkpoint.blocks)):
        w = np.where(block.weight >= 0, 1.0, -1.0)
        conv = _conv_direct(x, w, spec.conv_stride, spec.conv_padding)
        pooled = _pool_direct(conv, spec.pool_size, spec.pool_stride)
        if spec.kind == "half":
            scores = pooled.sum(axis=1)
            trace.blocks.append(BlockTrace(conv, pooled, None, None))
            trace.scores = scores
            trace.predicted = int(np.argmax(scores))
            return trace
        p = block.params
        clipped = hardtanh(pooled, p.clip)
        act = prelu(clipped, p.prelu_slope.reshape(-1, *([1] * (pooled.ndim - 1))))
        denom = np.sqrt(p.sigma_sq + p.epsilon)
        bshape = (-1, *([1] * (pooled.ndim - 1)))
        normed = (act - p.mu.reshape(bshape)) / denom.reshape(bshape) * p.gamma.reshape(
            bshape
        ) + p.beta.reshape(bshape)
        binary = np.where(normed >= 0, 1.0, -1.0)
        if plan.flatten_after == i:
            binary = binary.reshape(binary.shape[0], -1)
        trace.blocks.append(BlockTrace(conv, pooled, normed, binary))
        x = binary
    raise ConfigError("architecture has no half block")  # pragma: no cover
