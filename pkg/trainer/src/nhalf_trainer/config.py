"""Training configuration and the architecture description it trains.

The architecture schema mirrors the inference engine's checkpoint header
exactly; the trainer talks to the engine only through that exchange file.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class BlockConfig:
    kind: str  # "2d", "1d" or "half"
    in_channels: int
    out_channels: int
    kernel_size: int
    conv_stride: int = 1
    conv_padding: int = 0
    pool_size: int = 2
    pool_stride: int = 2

    @property
    def is_1d(self) -> bool:
        return self.kind in ("1d", "half")


@dataclass(frozen=True)
class Architecture:
    blocks: tuple[BlockConfig, ...]
    input_size: tuple[int, int]
    class_count: int
    clip: int = 31

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "input_size", tuple(self.input_size))
        if self.blocks[-1].kind != "half":
            raise ValueError("the last block must be the half block")
        if self.blocks[-1].out_channels != self.class_count:
            raise ValueError("half block out_channels must equal class_count")

    def to_dict(self) -> dict:
        return {
            "input_size": list(self.input_size),
            "class_count": self.class_count,
            "clip": self.clip,
            "blocks": [
                {
                    "kind": b.kind,
                    "in_channels": b.in_channels,
                    "out_channels": b.out_channels,
                    "kernel_size": b.kernel_size,
                    "conv_stride": b.conv_stride,
                    "conv_padding": b.conv_padding,
                    "pool_size": b.pool_size,
                    "pool_stride": b.pool_stride,
                }
                for b in self.blocks
            ],
        }

    def with_clip(self, clip: int) -> "Architecture":
        return replace(self, clip=clip)


def toy_architecture(class_count: int = 3, clip: int = 31) -> Architecture:
    """Small 24x24 chain used by the toy dataset and the test suite."""
    return Architecture(
        blocks=(
            BlockConfig("2d", 1, 8, 5, 1, 2, 2, 2),
            BlockConfig("2d", 8, 16, 5, 1, 2, 2, 1),
            BlockConfig("1d", 16, 32, 16, 1, 0, 4, 2),
            BlockConfig("half", 32, class_count, 16, 1, 0, 4, 2),
        ),
        input_size=(24, 24),
        class_count=class_count,
        clip=clip,
    )


def paper_architecture(class_count: int = 43, clip: int = 31) -> Architecture:
    """Full six-block 48x48 chain (the long-running GTSRB-scale setup)."""
    return Architecture(
        blocks=(
            BlockConfig("2d", 1, 8, 5, 1, 2, 2, 2),
            BlockConfig("2d", 8, 16, 5, 1, 2, 2, 2),
            BlockConfig("2d", 16, 32, 5, 1, 2, 2, 1),
            BlockConfig("2d", 32, 64, 5, 1, 2, 2, 1),
            BlockConfig("1d", 64, 128, 16, 1, 0, 4, 2),
            BlockConfig("half", 128, class_count, 16, 1, 0, 4, 2),
        ),
        input_size=(48, 48),
        class_count=class_count,
        clip=clip,
    )


@dataclass
class TrainConfig:
    """Hyperparameters and ablation toggles of one training run.

    use_clip hides the HardTanh bound (the RH toggle); use_half_block turns
    the final block back into a full block (the IB toggle), which blocks
    checkpoint export since the final fusion then has no trailing Sign.
    """

    architecture: Architecture
    epochs: int = 12
    batch_size: int = 32
    learning_rate: float = 0.01
    lr_decay: float = 0.9  # multiplicative, per epoch
    logit_scale: float = 0.1
    use_clip: bool = True
    use_half_block: bool = True
    seed: int = 0

    @property
    def clip(self) -> int:
        return self.architecture.clip

    def with_clip(self, clip: int) -> "TrainConfig":
        cfg = replace(self, architecture=self.architecture.with_clip(clip))
        return cfg
