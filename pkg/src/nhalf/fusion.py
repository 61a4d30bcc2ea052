"""Fusion compiler: fold HardTanh + PReLU + BatchNorm + next Sign into
per-channel integer threshold rules, and prove storage bit widths.

Folding turns the per-channel activation stack into the piecewise affine

    value(x) = hi_value                   for x > clip
             = lo_value                   for x < -clip
             = scale * x + offset         for 0 <= x <= clip
             = slope * scale * x + offset for -clip <= x < 0

and the trailing Sign reduces each affine piece to one integer compare
against the quantized zero crossing of that piece. The compiled rule holds
integers only; no real value survives into the deployable model.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .reference import ActivationParams, channel_scale_offset
from .tensors import signed_width

TIE_EPS = 1e-6  # zero crossings this close to an integer are flagged


class BranchMode(enum.IntEnum):
    """Decision form of one branch of a fused rule."""

    GE = 0  # +1 iff x >= threshold
    LE = 1  # +1 iff x <= threshold
    CONST_POS = 2  # +1 regardless of x
    CONST_NEG = 3  # -1 regardless of x


@dataclass(frozen=True)
class ChannelAffine:
    """Folded affine description of one channel (still real-valued)."""

    scale: float  # batchnorm gain applied to x
    offset: float  # batchnorm shift after folding
    prelu_slope: float
    clip: int
    hi_value: float  # value for x > clip
    lo_value: float  # value for x < -clip
    pos_zero: float | None  # zero crossing of scale*x + offset; None if scale == 0
    neg_zero: float | None  # zero crossing of slope*scale*x + offset; None if flat


@dataclass(frozen=True)
class FusedChannelRule:
    """Integer-only decision record replacing one channel's activation stack."""

    sat_hi: int  # +-1 output for x > clip
    sat_lo: int  # +-1 output for x < -clip
    pos_mode: BranchMode
    pos_threshold: int
    neg_mode: BranchMode
    neg_threshold: int
    clip: int

    def __post_init__(self) -> None:
        if self.sat_hi not in (-1, 1) or self.sat_lo not in (-1, 1):
            raise DomainError("saturation outputs must be +-1")
        if not (0 <= self.pos_threshold <= self.clip + 1):
            raise DomainError(f"pos_threshold {self.pos_threshold} outside [0, clip+1]")
        if not (-(self.clip + 1) <= self.neg_threshold <= 0):
            raise DomainError(f"neg_threshold {self.neg_threshold} outside [-(clip+1), 0]")


def _sgn(value: float) -> int:
    return 1 if value >= 0 else -1


def fold_bn_prelu(p: ActivationParams, channel: int) -> ChannelAffine:
    """Fold one channel's batchnorm and PReLU into affine coefficients."""
    scale, offset = channel_scale_offset(p, channel)
    slope = float(p.prelu_slope[channel])
    clip = p.clip
    hi_value = clip * scale + offset
    lo_value = slope * (-clip) * scale + offset
    pos_zero = -offset / scale if scale != 0.0 else None
    neg_slope = slope * scale
    neg_zero = -offset / neg_slope if neg_slope != 0.0 else None
    return ChannelAffine(scale, offset, slope, clip, hi_value, lo_value, pos_zero, neg_zero)


def _ceil_clamped(zero: float, lo: int, hi: int) -> int:
    if math.isinf(zero):
        return hi if zero > 0 else lo
    return min(max(math.ceil(zero), lo), hi)


def _floor_clamped(zero: float, lo: int, hi: int) -> int:
    if math.isinf(zero):
        return hi if zero > 0 else lo
    return min(max(math.floor(zero), lo), hi)


def derive_rule(c: ChannelAffine) -> FusedChannelRule:
    """Quantize a folded channel into an integer threshold rule.

    Thresholds are clamped into each branch's reachable integer domain;
    clamping never changes the decision for any reachable x. A branch whose
    slope is 0, or whose threshold leaves the reachable domain entirely,
    degenerates to a constant.
    """
    clip = c.clip

    # positive branch: x in [0, clip], value = scale*x + offset
    if c.scale > 0:
        pos_mode = BranchMode.GE
        pos_t = _ceil_clamped(c.pos_zero, 0, clip + 1)  # clip+1 == never
    elif c.scale < 0:
        t = _floor_clamped(c.pos_zero, -1, clip)
        if t < 0:  # x <= t unreachable for x >= 0
            pos_mode, pos_t = (BranchMode.CONST_NEG, 0)
        else:
            pos_mode, pos_t = (BranchMode.LE, t)
    else:
        pos_mode = BranchMode.CONST_POS if c.offset >= 0 else BranchMode.CONST_NEG
        pos_t = 0

    # negative branch: x in [-clip, -1], value = prelu_slope*scale*x + offset
    neg_slope = c.prelu_slope * c.scale
    if neg_slope > 0:
        neg_mode = BranchMode.GE
        neg_t = _ceil_clamped(c.neg_zero, -clip, 0)  # 0 == never
    elif neg_slope < 0:
        neg_mode = BranchMode.LE
        neg_t = _floor_clamped(c.neg_zero, -(clip + 1), -1)  # -(clip+1) == never
    else:
        neg_mode = BranchMode.CONST_POS if c.offset >= 0 else BranchMode.CONST_NEG
        neg_t = 0

    return FusedChannelRule(
        sat_hi=_sgn(c.hi_value),
        sat_lo=_sgn(c.lo_value),
        pos_mode=pos_mode,
        pos_threshold=pos_t,
        neg_mode=neg_mode,
        neg_threshold=neg_t,
        clip=clip,
    )


def boundary_ties(c: ChannelAffine) -> int:
    """Bitmask of branches whose zero crossing sits within TIE_EPS of an integer.

    Bit 0 flags the positive branch, bit 1 the negative branch. Tied
    crossings are resolved by the ceil/floor rule in derive_rule but are
    surfaced so downstream differential checks can attribute disagreements.
    """
    flags = 0
    for bit, zero, slope in (
        (1, c.pos_zero, c.scale),
        (2, c.neg_zero, c.prelu_slope * c.scale),
    ):
        if slope != 0.0 and zero is not None and math.isfinite(zero):
            if abs(zero - round(zero)) <= TIE_EPS:
                flags |= bit
    return flags


def fused_decide(x: int, r: FusedChannelRule) -> int:
    """Evaluate one fused rule at an integer x using only compares."""
    if x > r.clip:
        return r.sat_hi
    if x < -r.clip:
        return r.sat_lo
    mode, t = (r.pos_mode, r.pos_threshold) if x >= 0 else (r.neg_mode, r.neg_threshold)
    if mode == BranchMode.GE:
        return 1 if x >= t else -1
    if mode == BranchMode.LE:
        return 1 if x <= t else -1
    return 1 if mode == BranchMode.CONST_POS else -1


@dataclass(frozen=True)
class RuleArrays:
    """Column view of a rule list for vectorized evaluation."""

    pos_mode: np.ndarray
    pos_threshold: np.ndarray
    neg_mode: np.ndarray
    neg_threshold: np.ndarray
    sat_hi: np.ndarray
    sat_lo: np.ndarray
    clip: int


def rules_to_arrays(rules: Sequence[FusedChannelRule]) -> RuleArrays:
    clip = rules[0].clip
    if any(r.clip != clip for r in rules):
        raise DomainError("all rules of one block must share the clip bound")
    return RuleArrays(
        pos_mode=np.array([int(r.pos_mode) for r in rules], dtype=np.int64),
        pos_threshold=np.array([r.pos_threshold for r in rules], dtype=np.int64),
        neg_mode=np.array([int(r.neg_mode) for r in rules], dtype=np.int64),
        neg_threshold=np.array([r.neg_threshold for r in rules], dtype=np.int64),
        sat_hi=np.array([r.sat_hi for r in rules], dtype=np.int8),
        sat_lo=np.array([r.sat_lo for r in rules], dtype=np.int8),
        clip=clip,
    )


def _branch_signs(x: np.ndarray, modes: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    ge = np.where(x >= thresholds, 1, -1)
    le = np.where(x <= thresholds, 1, -1)
    const = np.where(modes == int(BranchMode.CONST_POS), 1, -1)
    return np.where(modes == int(BranchMode.GE), ge, np.where(modes == int(BranchMode.LE), le, const))


def apply_rules(values: np.ndarray, arrays: RuleArrays, counters=None) -> np.ndarray:
    """Vectorized fused_decide: values is (channels, positions) integers."""
    x = np.asarray(values)
    if x.ndim != 2 or x.shape[0] != arrays.pos_mode.shape[0]:
        raise DomainError("values must be (channels, positions) matching the rules")
    col = lambda a: a[:, None]
    pos = _branch_signs(x, col(arrays.pos_mode), col(arrays.pos_threshold))
    neg = _branch_signs(x, col(arrays.neg_mode), col(arrays.neg_threshold))
    out = np.where(
        x > arrays.clip,
        col(arrays.sat_hi),
        np.where(x < -arrays.clip, col(arrays.sat_lo), np.where(x >= 0, pos, neg)),
    ).astype(np.int8)
    if counters is not None:
        counters.int_compares += 4 * x.size
    return out


def _bits_for_value(v: int) -> int:
    return (v.bit_length() + 1) if v >= 0 else ((-v - 1).bit_length() + 1)


@dataclass(frozen=True)
class BlockWidths:
    index: int
    kind: str
    taps: int
    accumulator_bits: int
    stored_activation_bits: int
    threshold_bits: int


@dataclass(frozen=True)
class BitWidthReport:
    """Provable storage widths of the fused path; float_op_count must be 0."""

    blocks: tuple[BlockWidths, ...]
    float_op_count: int = 0

    @property
    def max_stored_activation_bits(self) -> int:
        return max(b.stored_activation_bits for b in self.blocks if b.kind != "half")

    @property
    def max_threshold_bits(self) -> int:
        return max((b.threshold_bits for b in self.blocks if b.kind != "half"), default=0)


def analyze_bitwidths(
    block_infos: Sequence[tuple[str, int]],
    clip: int,
    rules_per_block: Sequence[Sequence[FusedChannelRule] | None],
    score_positions: int,
    use_clip: bool = True,
) -> BitWidthReport:
    """Derive per-block widths from tap counts and compiled rules.

    block_infos is a (kind, taps) pair per block. Accumulators must hold
    +-taps; stored activations hold the pooled value after saturating to
    [-clip, clip] (or the raw accumulator bound when use_clip is False);
    threshold widths cover every clamped threshold of the block's rules.
    """
    rows = []
    for index, (kind, taps) in enumerate(block_infos):
        acc = signed_width(taps)
        if kind == "half":
            stored = signed_width(score_positions * taps)
            threshold = 0
        else:
            stored = signed_width(min(clip, taps)) if use_clip else acc
            rules = rules_per_block[index]
            widths = [
                _bits_for_value(t)
                for r in (rules or ())
                for mode, t in ((r.pos_mode, r.pos_threshold), (r.neg_mode, r.neg_threshold))
                if mode in (BranchMode.GE, BranchMode.LE)
            ]
            threshold = max(widths, default=0)
        rows.append(BlockWidths(index, kind, taps, acc, stored, threshold))
    return BitWidthReport(blocks=tuple(rows), float_op_count=0)
