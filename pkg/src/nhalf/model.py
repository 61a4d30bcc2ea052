"""Architecture configuration, shape inference, checkpoint and fused model.

The block chain is linear: M 2-D convolution blocks, then 1-D blocks, then
exactly one trailing half block (convolution + pooling only) whose output
channels are the classes. The compile pipeline binarizes latent weights and
folds every full block's activation stack into integer threshold rules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CompileError, ConfigError
from .fusion import (
    BitWidthReport,
    FusedChannelRule,
    analyze_bitwidths,
    boundary_ties,
    derive_rule,
    fold_bn_prelu,
)
from .reference import ActivationParams
from .tensors import BitTensor, ConvGeometry, signed_width

FORMAT_VERSION = 1
UNCLIPPED_STORAGE_BITS = 15  # observed storage width when clipping is off; report-only


@dataclass(frozen=True)
class BlockSpec:
    """One convolution block of the chain."""

    kind: str  # "2d", "1d" or "half"
    in_channels: int
    out_channels: int
    kernel_size: int
    conv_stride: int = 1
    conv_padding: int = 0
    pool_size: int = 2
    pool_stride: int = 2

    def __post_init__(self) -> None:
        if self.kind not in ("2d", "1d", "half"):
            raise ConfigError(f"unknown block kind {self.kind!r}")
        for name in ("in_channels", "out_channels", "kernel_size", "conv_stride", "pool_size", "pool_stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.conv_padding < 0:
            raise ConfigError("conv_padding must be >= 0")

    @property
    def is_1d(self) -> bool:
        return self.kind in ("1d", "half")

    @property
    def taps(self) -> int:
        volume = self.kernel_size if self.is_1d else self.kernel_size**2
        return self.in_channels * volume

    @property
    def weight_count(self) -> int:
        return self.out_channels * self.taps

    def geometry(self) -> ConvGeometry:
        kernel = (self.kernel_size,) if self.is_1d else (self.kernel_size, self.kernel_size)
        return ConvGeometry(kernel, self.conv_stride, self.conv_padding)


@dataclass(frozen=True)
class ArchitectureConfig:
    blocks: tuple[BlockSpec, ...]
    input_size: tuple[int, int]
    class_count: int
    clip: int = 31

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        if not self.blocks:
            raise ConfigError("architecture needs at least one block")
        if self.clip < 1:
            raise ConfigError("clip must be >= 1")
        if self.class_count < 2:
            raise ConfigError("class_count must be >= 2")
        kinds = [b.kind for b in self.blocks]
        if kinds[-1] != "half" or kinds.count("half") != 1:
            raise ConfigError("the last block, and only it, must be the half block")
        if kinds[0] != "2d":
            raise ConfigError("the first block must be 2-D")
        transitions = sum(
            1 for a, b in zip(kinds, kinds[1:]) if a == "2d" and b != "2d"
        )
        if transitions != 1 or any(
            a != "2d" and b == "2d" for a, b in zip(kinds, kinds[1:])
        ):
            raise ConfigError("blocks must be 2-D blocks, then 1-D blocks, then half")
        for i, (a, b) in enumerate(zip(self.blocks, self.blocks[1:])):
            if a.out_channels != b.in_channels:
                raise ConfigError(
                    f"block {i} out_channels {a.out_channels} != block {i+1} in_channels {b.in_channels}"
                )
        if self.blocks[-1].out_channels != self.class_count:
            raise ConfigError("half block out_channels must equal class_count")


@dataclass(frozen=True)
class BlockPlan:
    index: int
    kind: str
    in_shape: tuple[int, ...]
    conv_out: tuple[int, ...]
    pool_out: tuple[int, ...]
    taps: int


@dataclass(frozen=True)
class ShapePlan:
    blocks: tuple[BlockPlan, ...]
    flatten_after: int  # block index whose pooled (C,H,W) output is reshaped to (C, H*W)
    score_positions: int

    @property
    def max_intermediate_elements(self) -> int:
        return max(
            int(np.prod(b.pool_out)) for b in self.blocks if b.kind != "half"
        )

    @property
    def max_patch_elements(self) -> int:
        """Largest im2col buffer (rows * taps) any block materializes."""
        return max(int(np.prod(b.conv_out[1:])) * b.taps for b in self.blocks)


def _pool_len(length: int, window: int, stride: int) -> int:
    return (length - window) // stride + 1


def infer_shapes(config: ArchitectureConfig) -> ShapePlan:
    """Run the conv/pool arithmetic over the whole chain.

    Rejects any configuration where an intermediate extent vanishes, naming
    the offending block.
    """
    plans: list[BlockPlan] = []
    flatten_after = -1
    shape: tuple[int, ...] = (1, *config.input_size)
    for i, spec in enumerate(config.blocks):
        if spec.is_1d and len(shape) == 3:
            shape = (shape[0], shape[1] * shape[2])
            flatten_after = i - 1
        spatial = shape[1:]
        k, s, p = spec.kernel_size, spec.conv_stride, spec.conv_padding
        conv_spatial = tuple((ext + 2 * p - k) // s + 1 for ext in spatial)
        if any(ext < 1 for ext in conv_spatial):
            raise ConfigError(f"block {i}: convolution output vanishes for input {shape}")
        pool_spatial = tuple(
            _pool_len(ext, spec.pool_size, spec.pool_stride) for ext in conv_spatial
        )
        if any(ext < 1 for ext in pool_spatial):
            raise ConfigError(f"block {i}: pooled output vanishes for conv output {conv_spatial}")
        conv_out = (spec.out_channels, *conv_spatial)
        pool_out = (spec.out_channels, *pool_spatial)
        plans.append(BlockPlan(i, spec.kind, shape, conv_out, pool_out, spec.taps))
        shape = pool_out
    score_positions = plans[-1].pool_out[1]
    return ShapePlan(tuple(plans), flatten_after, score_positions)


def default_config() -> ArchitectureConfig:
    """Six-block 48x48 grayscale configuration: 4 2-D blocks, one 1-D, one half."""
    blocks = (
        BlockSpec("2d", 1, 8, 5, 1, 2, 2, 2),
        BlockSpec("2d", 8, 16, 5, 1, 2, 2, 2),
        BlockSpec("2d", 16, 32, 5, 1, 2, 2, 1),
        BlockSpec("2d", 32, 64, 5, 1, 2, 2, 1),
        BlockSpec("1d", 64, 128, 16, 1, 0, 4, 2),
        BlockSpec("half", 128, 43, 16, 1, 0, 4, 2),
    )
    return ArchitectureConfig(blocks, (48, 48), class_count=43, clip=31)


def count_params(config: ArchitectureConfig) -> tuple[list[int], int]:
    """Binary weight counts per block and their total."""
    per_block = [b.weight_count for b in config.blocks]
    return per_block, sum(per_block)


@dataclass(frozen=True)
class CheckpointBlock:
    weight: np.ndarray  # float64 latent weights, (out, in, k, k) or (out, in, k)
    params: ActivationParams | None  # None for the half block


@dataclass(frozen=True)
class Checkpoint:
    """Trained float parameters: the trainer-to-compiler exchange object."""

    config: ArchitectureConfig
    blocks: tuple[CheckpointBlock, ...]
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if len(self.blocks) != len(self.config.blocks):
            raise ConfigError("checkpoint block count does not match the architecture")
        for i, (spec, block) in enumerate(zip(self.config.blocks, self.blocks)):
            expected = self._weight_shape(spec)
            w = np.asarray(block.weight)
            if w.shape != expected:
                raise ConfigError(
                    f"block {i}: weight shape {w.shape} does not match {expected}"
                )
            if not np.all(np.isfinite(w)):
                raise ConfigError(f"block {i}: weights contain non-finite values")
            if spec.kind == "half":
                if block.params is not None:
                    raise ConfigError("half block carries no activation params")
            else:
                if block.params is None:
                    raise ConfigError(f"block {i}: missing activation params")
                if block.params.channels != spec.out_channels:
                    raise ConfigError(
                        f"block {i}: params cover {block.params.channels} channels, "
                        f"expected {spec.out_channels}"
                    )
                if block.params.clip != self.config.clip:
                    raise ConfigError(f"block {i}: clip differs from architecture clip")

    @staticmethod
    def _weight_shape(spec: BlockSpec) -> tuple[int, ...]:
        k = spec.kernel_size
        if spec.is_1d:
            return (spec.out_channels, spec.in_channels, k)
        return (spec.out_channels, spec.in_channels, k, k)

    def plan(self) -> ShapePlan:
        return infer_shapes(self.config)


def with_clip(checkpoint: Checkpoint, clip: int) -> Checkpoint:
    """Same checkpoint with the HardTanh bound replaced everywhere."""
    config = ArchitectureConfig(
        checkpoint.config.blocks, checkpoint.config.input_size, checkpoint.config.class_count, clip
    )
    blocks = []
    for block in checkpoint.blocks:
        params = block.params
        if params is not None:
            params = ActivationParams(
                params.gamma, params.beta, params.mu, params.sigma_sq,
                params.prelu_slope, params.epsilon, clip,
            )
        blocks.append(CheckpointBlock(block.weight, params))
    return Checkpoint(config, tuple(blocks), checkpoint.format_version)


@dataclass(frozen=True)
class FusedBlock:
    weights: BitTensor  # (out_channels, taps)
    rules: tuple[FusedChannelRule, ...] | None  # None for the half block
    tie_flags: tuple[int, ...] | None  # per-channel boundary-tie bitmask


@dataclass(frozen=True)
class FusedModel:
    """Deployable artifact: packed weights + integer rules, no floats anywhere."""

    config: ArchitectureConfig
    plan: ShapePlan
    blocks: tuple[FusedBlock, ...]
    report: BitWidthReport
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        _, total = count_params(self.config)
        if self.weight_bit_count != total:
            raise ConfigError(
                f"model stores {self.weight_bit_count} weight bits, expected {total}"
            )

    @property
    def weight_bit_count(self) -> int:
        return sum(b.weights.bit_count for b in self.blocks)

    @property
    def boundary_tie_count(self) -> int:
        return sum(
            bin(f).count("1") for b in self.blocks if b.tie_flags for f in b.tie_flags
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FusedModel):
            return NotImplemented
        return (
            self.config == other.config
            and self.plan == other.plan
            and self.blocks == other.blocks
            and self.report == other.report
            and self.format_version == other.format_version
        )


def compile_checkpoint(checkpoint: Checkpoint) -> FusedModel:
    """Binarize weights and fold every full block into integer rules.

    Deterministic: the same checkpoint always yields a byte-identical model.
    """
    config = checkpoint.config
    plan = checkpoint.plan()
    blocks: list[FusedBlock] = []
    rules_per_block: list[tuple[FusedChannelRule, ...] | None] = []
    for i, (spec, block) in enumerate(zip(config.blocks, checkpoint.blocks)):
        signs = np.where(np.asarray(block.weight, dtype=np.float64) >= 0, 1, -1)
        packed = BitTensor.from_signs(signs.reshape(spec.out_channels, spec.taps))
        if spec.kind == "half":
            blocks.append(FusedBlock(packed, None, None))
            rules_per_block.append(None)
            continue
        rules: list[FusedChannelRule] = []
        ties: list[int] = []
        for channel in range(spec.out_channels):
            try:
                affine = fold_bn_prelu(block.params, channel)
                rules.append(derive_rule(affine))
                ties.append(boundary_ties(affine))
            except Exception as exc:  # pragma: no cover - params are pre-validated
                raise CompileError(f"block {i} channel {channel}: {exc}") from exc
        blocks.append(FusedBlock(packed, tuple(rules), tuple(ties)))
        rules_per_block.append(tuple(rules))
    report = analyze_bitwidths(
        [(spec.kind, spec.taps) for spec in config.blocks],
        config.clip,
        rules_per_block,
        plan.score_positions,
    )
    return FusedModel(config, plan, tuple(blocks), report)


KIB = 1024.0


@dataclass(frozen=True)
class StorageReport:
    """Size accounting for weights, rule tables and intermediate buffers."""

    param_count: int
    weight_bytes: float
    weight_kib: float
    threshold_table_bytes: int
    float32_kib: float
    int8_kib: float
    float32_ratio: float
    int8_ratio: float
    activation_bits: int
    unclipped_activation_bits: int
    intermediate_ratio: float
    intermediate_elements: int
    intermediate_bytes_clipped: float
    intermediate_bytes_unclipped: float
    patch_buffer_elements: int


RULE_RECORD_BYTES = 8  # 2 mode bytes + 2x i16 thresholds + 2 saturation bytes


def storage_report(
    config: ArchitectureConfig,
    clip: int | None = None,
    param_count: int | None = None,
) -> StorageReport:
    """Account storage of the fused artifact against float32/int8 equivalents.

    `param_count` defaults to the count derived from the configuration but
    may be overridden to report a stated count. The intermediate comparison
    holds the unclipped side at UNCLIPPED_STORAGE_BITS.
    """
    clip = config.clip if clip is None else clip
    _, derived = count_params(config)
    count = derived if param_count is None else param_count
    plan = infer_shapes(config)
    weight_bytes = count / 8.0
    rule_channels = sum(b.out_channels for b in config.blocks if b.kind != "half")
    activation_bits = signed_width(clip)
    elements = plan.max_intermediate_elements
    return StorageReport(
        param_count=count,
        weight_bytes=weight_bytes,
        weight_kib=weight_bytes / KIB,
        threshold_table_bytes=rule_channels * RULE_RECORD_BYTES,
        float32_kib=count * 4.0 / KIB,
        int8_kib=count * 1.0 / KIB,
        float32_ratio=32.0,
        int8_ratio=8.0,
        activation_bits=activation_bits,
        unclipped_activation_bits=UNCLIPPED_STORAGE_BITS,
        intermediate_ratio=UNCLIPPED_STORAGE_BITS / activation_bits,
        intermediate_elements=elements,
        intermediate_bytes_clipped=elements * activation_bits / 8.0,
        intermediate_bytes_unclipped=elements * UNCLIPPED_STORAGE_BITS / 8.0,
        patch_buffer_elements=plan.max_patch_elements,
    )


# ---------------------------------------------------------------------------
# dict round-trips used by the container formats


def config_to_dict(config: ArchitectureConfig) -> dict:
    return {
        "input_size": list(config.input_size),
        "class_count": config.class_count,
        "clip": config.clip,
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
            for b in config.blocks
        ],
    }


def config_from_dict(data: dict) -> ArchitectureConfig:
    blocks = tuple(BlockSpec(**entry) for entry in data["blocks"])
    return ArchitectureConfig(
        blocks, tuple(data["input_size"]), data["class_count"], data["clip"]
    )


def plan_to_dict(plan: ShapePlan) -> dict:
    return {
        "flatten_after": plan.flatten_after,
        "score_positions": plan.score_positions,
        "blocks": [
            {
                "index": b.index,
                "kind": b.kind,
                "in_shape": list(b.in_shape),
                "conv_out": list(b.conv_out),
                "pool_out": list(b.pool_out),
                "taps": b.taps,
            }
            for b in plan.blocks
        ],
    }


def plan_from_dict(data: dict) -> ShapePlan:
    blocks = tuple(
        BlockPlan(
            b["index"], b["kind"], tuple(b["in_shape"]), tuple(b["conv_out"]),
            tuple(b["pool_out"]), b["taps"],
        )
        for b in data["blocks"]
    )
    return ShapePlan(blocks, data["flatten_after"], data["score_positions"])


def report_to_dict(report: BitWidthReport) -> dict:
    from dataclasses import asdict

    return {
        "float_op_count": report.float_op_count,
        "blocks": [asdict(b) for b in report.blocks],
    }


def report_from_dict(data: dict) -> BitWidthReport:
    from .fusion import BlockWidths

    blocks = tuple(BlockWidths(**entry) for entry in data["blocks"])
    return BitWidthReport(blocks, data["float_op_count"])
