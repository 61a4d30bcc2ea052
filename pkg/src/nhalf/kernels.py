"""XNOR/popcount dot products, binary GEMM, binary convolution, max pooling.

These are the only arithmetic primitives the fused inference path may use:
bitwise XOR, popcount, integer add and integer compare. Every kernel takes
an optional OpCounters and accounts for the scalar operations a hardware
implementation would execute; the float counter exists so the engine can
prove the fused path never touches floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensors import (
    BitTensor,
    ConvGeometry,
    IntTensor,
    PatchMatrix,
    conv_output_dims,
    im2col,
    signed_width,
)

if hasattr(np, "bitwise_count"):
    _popcount = np.bitwise_count
else:  # numpy < 2.0: byte-wise table lookup
    _POP8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)

    def _popcount(words: np.ndarray) -> np.ndarray:
        as_bytes = np.ascontiguousarray(words).view(np.uint8)
        return _POP8[as_bytes].reshape(*words.shape, 8).sum(axis=-1, dtype=np.uint64)


@dataclass
class OpCounters:
    """Operation tallies for one or more forward passes."""

    xnor_words: int = 0
    popcounts: int = 0
    int_adds: int = 0
    int_compares: int = 0
    float_ops: int = 0

    def merge(self, other: "OpCounters") -> None:
        self.xnor_words += other.xnor_words
        self.popcounts += other.popcounts
        self.int_adds += other.int_adds
        self.int_compares += other.int_compares
        self.float_ops += other.float_ops


def xnor_dot(x: BitTensor, w: BitTensor, n: int, counters: OpCounters | None = None) -> int:
    """+-1 inner product of two packed rows: n - 2 * popcount(x XOR w)."""
    if x.shape.row_len != n or w.shape.row_len != n:
        raise ShapeError(
            f"logical length mismatch: {x.shape.row_len} vs {w.shape.row_len} vs n={n}"
        )
    if x.shape.rows != 1 or w.shape.rows != 1:
        raise ShapeError("xnor_dot expects single rows")
    diff = x.words ^ w.words
    mismatches = int(_popcount(diff).sum())
    if counters is not None:
        words = x.shape.words_per_row
        counters.xnor_words += words
        counters.popcounts += words
        counters.int_adds += words
    return n - 2 * mismatches


_GEMM_CHUNK_WORDS = 1 << 24  # cap the (rows, out, words) XOR workspace


def binary_gemm(a: PatchMatrix, b: BitTensor, counters: OpCounters | None = None) -> IntTensor:
    """Multiply patches by packed weight rows; entry (r, o) is a +-1 dot product."""
    if len(b.shape.dims) != 2:
        raise ShapeError("weight operand must be (out_channels, taps)")
    out_channels, taps = b.shape.dims
    if a.cols != taps:
        raise ShapeError(f"inner dimension mismatch: {a.cols} patches vs {taps} taps")

    aw = a.data.words
    bw = b.words
    rows, words = aw.shape
    result = np.empty((rows, out_channels), dtype=np.int64)
    chunk = max(1, _GEMM_CHUNK_WORDS // max(1, out_channels * words))
    for start in range(0, rows, chunk):
        block = aw[start : start + chunk]
        diff = block[:, None, :] ^ bw[None, :, :]
        mismatches = _popcount(diff).sum(axis=2, dtype=np.int64)
        result[start : start + chunk] = taps - 2 * mismatches
    if counters is not None:
        total_words = rows * out_channels * words
        counters.xnor_words += total_words
        counters.popcounts += total_words
        counters.int_adds += total_words + rows * out_channels
    return IntTensor(result, signed_width(taps))


def conv_binary(
    input: BitTensor,
    weights: BitTensor,
    geom: ConvGeometry,
    counters: OpCounters | None = None,
) -> IntTensor:
    """Binary convolution lowered to im2col + GEMM.

    `weights` is packed as (out_channels, taps) with taps = in_channels *
    kernel volume, matching the PatchMatrix row order.
    """
    dims = input.shape.dims
    in_channels = dims[0]
    taps = in_channels * int(np.prod(geom.kernel))
    if len(weights.shape.dims) != 2 or weights.shape.dims[1] != taps:
        raise ShapeError(
            f"weights must be (out, {taps}) for input {dims} and kernel {geom.kernel}"
        )
    out_dims = conv_output_dims(dims, geom)
    patches = im2col(input, geom)
    product = binary_gemm(patches, weights, counters)
    out_channels = weights.shape.dims[0]
    values = product.values.T.reshape((out_channels, *out_dims))
    return IntTensor(values, product.declared_bits)


def maxpool(
    input: IntTensor,
    window: int,
    stride: int,
    counters: OpCounters | None = None,
) -> IntTensor:
    """Sliding-window max over the spatial dims; no pooling padding.

    Output length per pooled dimension is floor((L - window) / stride) + 1.
    """
    if window < 1 or stride < 1:
        raise ShapeError("window and stride must be >= 1")
    vals = input.values
    spatial = vals.shape[1:] if vals.ndim > 1 else vals.shape
    if any(window > extent for extent in spatial):
        raise ShapeError(f"pool window {window} exceeds input extent {spatial}")

    if vals.ndim == 1:
        win = np.lib.stride_tricks.sliding_window_view(vals, window)[::stride]
        pooled = win.max(axis=-1)
        window_cells = window
    elif vals.ndim == 2:
        win = np.lib.stride_tricks.sliding_window_view(vals, window, axis=1)
        pooled = win[:, ::stride].max(axis=-1)
        window_cells = window
    elif vals.ndim == 3:
        win = np.lib.stride_tricks.sliding_window_view(vals, (window, window), axis=(1, 2))
        pooled = win[:, ::stride, ::stride].max(axis=(-2, -1))
        window_cells = window * window
    else:
        raise ShapeError(f"maxpool supports 1-3 dims, got {vals.ndim}")
    if counters is not None:
        counters.int_compares += pooled.size * (window_cells - 1)
    return IntTensor(pooled, input.declared_bits)
