import numpy as np
import pytest

from nhalf import (
    ActivationParams,
    ArchitectureConfig,
    BlockSpec,
    Checkpoint,
    CheckpointBlock,
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def small_config(clip: int = 31) -> ArchitectureConfig:
    """Four-block 16x16 architecture used for fast end-to-end tests."""
    blocks = (
        BlockSpec("2d", 1, 4, 3, 1, 1, 2, 2),
        BlockSpec("2d", 4, 6, 3, 1, 1, 2, 1),
        BlockSpec("1d", 6, 10, 8, 1, 0, 3, 2),
        BlockSpec("half", 10, 5, 6, 1, 0, 4, 2),
    )
    return ArchitectureConfig(blocks, (16, 16), class_count=5, clip=clip)


def identity_params(channels: int, clip: int = 31, epsilon: float = 1e-5) -> ActivationParams:
    """Parameters whose folded affine is exactly the identity (scale 1, offset 0)."""
    ones = np.ones(channels)
    return ActivationParams(
        gamma=ones,
        beta=np.zeros(channels),
        mu=np.zeros(channels),
        sigma_sq=ones - epsilon,
        prelu_slope=ones,
        epsilon=epsilon,
        clip=clip,
    )


def draw_params(rng, channels: int, clip: int) -> ActivationParams:
    """Acceptance-range parameter draw: wide, both-signed, occasionally degenerate."""
    return ActivationParams(
        gamma=rng.uniform(-4, 4, channels),
        beta=rng.uniform(-4, 4, channels),
        mu=rng.uniform(-4, 4, channels),
        sigma_sq=rng.uniform(1e-4, 16, channels),
        prelu_slope=rng.uniform(-2, 2, channels),
        epsilon=1e-5,
        clip=clip,
    )


def plausible_params(rng, channels: int, taps: int, clip: int) -> ActivationParams:
    """Parameters scaled like a trained block whose inputs are +-1 conv sums."""
    spread = np.sqrt(taps)
    sign_flip = np.where(rng.random(channels) < 0.2, -1.0, 1.0)
    return ActivationParams(
        gamma=sign_flip * rng.uniform(0.25, 1.5, channels),
        beta=rng.uniform(-1, 1, channels),
        mu=rng.normal(0.0, spread / 2, channels),
        sigma_sq=rng.uniform(0.25 * taps, 2.0 * taps, channels),
        prelu_slope=np.where(
            rng.random(channels) < 0.1,
            rng.uniform(-0.5, 0.0, channels),
            rng.uniform(0.05, 0.5, channels),
        ),
        epsilon=1e-5,
        clip=clip,
    )


def random_checkpoint(config: ArchitectureConfig, rng, identity: bool = False) -> Checkpoint:
    blocks = []
    for spec in config.blocks:
        shape = Checkpoint._weight_shape(spec)
        weight = rng.uniform(-1, 1, shape)
        if spec.kind == "half":
            blocks.append(CheckpointBlock(weight, None))
            continue
        if identity:
            params = identity_params(spec.out_channels, config.clip)
        else:
            params = plausible_params(rng, spec.out_channels, spec.taps, config.clip)
        blocks.append(CheckpointBlock(weight, params))
    return Checkpoint(config, tuple(blocks))


def random_image(rng, height: int, width: int) -> np.ndarray:
    return rng.choice(np.array([-1, 1], dtype=np.int8), size=(1, height, width))


def oracle_activation_values(xs: np.ndarray, p: ActivationParams) -> np.ndarray:
    """Independent composition batchnorm(prelu(hardtanh(x))), (channels, len(xs))."""
    h = np.clip(xs.astype(np.float64), -p.clip, p.clip)
    pr = np.where(h >= 0, h, p.prelu_slope[:, None] * h)
    denom = np.sqrt(p.sigma_sq + p.epsilon)[:, None]
    return (pr - p.mu[:, None]) / denom * p.gamma[:, None] + p.beta[:, None]
