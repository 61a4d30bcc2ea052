"""Torch model of the N+Half chain with straight-through gradients.

The forward pass binarizes both weights and activations through a Sign
whose backward is a clipped identity (gradient passes where |x| <= 1 and is
zero outside); latent weights are clamped to [-1, 1] after every optimizer
step so sign flips stay responsive. Convolution padding fills with -1, not
0, matching the binary domain of the inference engine.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import Architecture, BlockConfig, TrainConfig


class _SignSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, 1.0, -1.0).to(x.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        return grad_output * (x.abs() <= 1).to(grad_output.dtype)


def sign_ste(x: torch.Tensor) -> torch.Tensor:
    """Sign with 0 -> +1 and a clipped-identity gradient."""
    return _SignSTE.apply(x)


class ConvBlock(nn.Module):
    """conv -> pool, plus hardtanh -> prelu -> batchnorm when `full`."""

    def __init__(self, spec: BlockConfig, clip: int, use_clip: bool, full: bool):
        super().__init__()
        self.spec = spec
        self.clip = clip
        self.use_clip = use_clip
        self.full = full
        if spec.is_1d:
            shape = (spec.out_channels, spec.in_channels, spec.kernel_size)
        else:
            shape = (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
        self.weight = nn.Parameter(torch.empty(shape).uniform_(-1, 1))
        if full:
            self.prelu = nn.PReLU(spec.out_channels, init=0.25)
            norm = nn.BatchNorm1d if spec.is_1d else nn.BatchNorm2d
            self.bn = norm(spec.out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        w = sign_ste(self.weight)
        p = self.spec.conv_padding
        if self.spec.is_1d:
            if p:
                x = F.pad(x, (p, p), value=-1.0)
            y = F.conv1d(x, w, stride=self.spec.conv_stride)
            y = F.max_pool1d(y, self.spec.pool_size, self.spec.pool_stride)
        else:
            if p:
                x = F.pad(x, (p, p, p, p), value=-1.0)
            y = F.conv2d(x, w, stride=self.spec.conv_stride)
            y = F.max_pool2d(y, self.spec.pool_size, self.spec.pool_stride)
        if self.full:
            if self.use_clip:
                y = y.clamp(-float(self.clip), float(self.clip))
            y = self.prelu(y)
            y = self.bn(y)
        return y


class NHalfNet(nn.Module):
    """The full chain; output is the per-class position sum of the last block."""

    def __init__(self, architecture: Architecture, use_clip: bool = True, use_half_block: bool = True):
        super().__init__()
        self.architecture = architecture
        self.use_half_block = use_half_block
        blocks = []
        last = len(architecture.blocks) - 1
        for i, spec in enumerate(architecture.blocks):
            full = (i != last) or not use_half_block
            blocks.append(ConvBlock(spec, architecture.clip, use_clip, full))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, block in enumerate(self.blocks):
            if block.spec.is_1d and x.dim() == 4:
                x = x.reshape(x.shape[0], x.shape[1], -1)
            y = block(x)
            if i == len(self.blocks) - 1:
                return y.sum(dim=2)
            x = sign_ste(y)
        raise RuntimeError("unreachable")  # pragma: no cover

    @torch.no_grad()
    def clamp_latent_weights(self) -> None:
        for block in self.blocks:
            block.weight.clamp_(-1.0, 1.0)


def build_net(cfg: TrainConfig) -> NHalfNet:
    return NHalfNet(cfg.architecture, cfg.use_clip, cfg.use_half_block)
