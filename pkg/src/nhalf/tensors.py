"""Bit-packed and small-integer tensors plus im2col lowering.

Packing law: logical value +1 is stored as bit 1 and -1 as bit 0, LSB-first
inside 64-bit little-endian words. Every run of the innermost dimension
starts on a word boundary, so any row of a patch or weight matrix is an
aligned word slice and can be addressed in constant time. Padding bits are
always 0, which is also the encoding of -1; convolution padding therefore
uses -1 and costs nothing in the XNOR/popcount arithmetic.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from math import prod

import numpy as np

from .errors import DomainError, ShapeError

WORD_BITS = 64

if sys.byteorder != "little":  # word views below assume a little-endian host
    raise ImportError("nhalf.tensors requires a little-endian platform")


def signed_width(magnitude: int) -> int:
    """Smallest two's-complement width that holds both +magnitude and -magnitude."""
    if magnitude < 0:
        raise DomainError(f"magnitude must be non-negative, got {magnitude}")
    return int(magnitude).bit_length() + 1


@dataclass(frozen=True)
class Shape:
    """Row-major extent list; the innermost dimension is the packed row unit."""

    dims: tuple[int, ...]
    layout: str = "row-major"

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not self.dims or any(d < 1 for d in self.dims):
            raise ShapeError(f"all extents must be >= 1, got {self.dims}")
        if self.layout != "row-major":
            raise ShapeError(f"unsupported layout {self.layout!r}")

    @property
    def size(self) -> int:
        return prod(self.dims)

    @property
    def rows(self) -> int:
        return prod(self.dims[:-1])

    @property
    def row_len(self) -> int:
        return self.dims[-1]

    @property
    def words_per_row(self) -> int:
        return (self.row_len + WORD_BITS - 1) // WORD_BITS


def _pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a (rows, n) array of 0/1 into (rows, ceil(n/64)) uint64 words."""
    rows, n = bits.shape
    padded_cols = ((n + WORD_BITS - 1) // WORD_BITS) * WORD_BITS
    if padded_cols != n:
        padded = np.zeros((rows, padded_cols), dtype=np.uint8)
        padded[:, :n] = bits
    else:
        padded = np.ascontiguousarray(bits, dtype=np.uint8)
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view(np.uint64)


def _unpack_rows(words: np.ndarray, row_len: int) -> np.ndarray:
    """Inverse of _pack_rows; returns a (rows, row_len) uint8 array of 0/1."""
    rows = words.shape[0]
    as_bytes = np.ascontiguousarray(words).view(np.uint8).reshape(rows, -1)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")
    return bits[:, :row_len]


def _row_mask(row_len: int, words_per_row: int) -> np.ndarray:
    """Word mask with 1s on logical bit positions and 0s on padding bits."""
    mask = np.zeros(words_per_row, dtype=np.uint64)
    full, rem = divmod(row_len, WORD_BITS)
    mask[:full] = np.uint64(0xFFFFFFFFFFFFFFFF)
    if rem:
        mask[full] = np.uint64((1 << rem) - 1)
    return mask


@dataclass(frozen=True, eq=False)
class BitTensor:
    """Packed +-1 tensor; immutable after construction."""

    shape: Shape
    words: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.shape != (self.shape.rows, self.shape.words_per_row):
            raise ShapeError(
                f"word block {words.shape} does not match shape {self.shape.dims}"
            )
        mask = _row_mask(self.shape.row_len, self.shape.words_per_row)
        if np.any(words & ~mask):
            raise DomainError("padding bits must be 0")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @classmethod
    def from_signs(cls, values: np.ndarray) -> "BitTensor":
        """Pack an N-d array of +-1 integers."""
        arr = np.asarray(values)
        if arr.size == 0:
            raise ShapeError("cannot pack an empty tensor")
        if not np.all((arr == 1) | (arr == -1)):
            raise DomainError("all elements must be +1 or -1")
        shape = Shape(arr.shape)
        bits = (arr.reshape(shape.rows, shape.row_len) == 1).astype(np.uint8)
        return cls(shape, _pack_rows(bits))

    def to_signs(self) -> np.ndarray:
        """Unpack to an int8 array of +-1 with the logical shape."""
        bits = _unpack_rows(self.words, self.shape.row_len)
        return (bits.astype(np.int8) * 2 - 1).reshape(self.shape.dims)

    def row(self, index: int) -> "BitTensor":
        """One innermost-dimension run as a 1-D BitTensor (shared storage)."""
        return BitTensor(Shape((self.shape.row_len,)), self.words[index : index + 1])

    @property
    def bit_count(self) -> int:
        return self.shape.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.words, other.words)

    def __hash__(self) -> int:  # content hash; tensors are immutable
        return hash((self.shape, self.words.tobytes()))


def pack_bits(values) -> BitTensor:
    """Pack a +-1 integer sequence; raises DomainError on any other value."""
    return BitTensor.from_signs(np.asarray(values))


@dataclass(frozen=True, eq=False)
class IntTensor:
    """Signed integer tensor with a declared minimal storage width."""

    values: np.ndarray = field(repr=False)
    declared_bits: int = 32

    def __post_init__(self) -> None:
        vals = np.asarray(self.values)
        if not np.issubdtype(vals.dtype, np.integer):
            raise DomainError(f"IntTensor requires integer values, got {vals.dtype}")
        vals = np.ascontiguousarray(vals, dtype=np.int64)
        lo = -(1 << (self.declared_bits - 1))
        hi = (1 << (self.declared_bits - 1)) - 1
        if vals.size and (vals.min() < lo or vals.max() > hi):
            raise DomainError(
                f"values exceed declared {self.declared_bits}-bit signed range"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IntTensor):
            return NotImplemented
        return self.declared_bits == other.declared_bits and np.array_equal(
            self.values, other.values
        )


@dataclass(frozen=True)
class ConvGeometry:
    """Kernel size, stride and symmetric padding of one convolution."""

    kernel: tuple[int, ...]
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if len(self.kernel) not in (1, 2) or any(k < 1 for k in self.kernel):
            raise ShapeError(f"bad kernel {self.kernel}")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError("stride must be >= 1 and padding >= 0")


@dataclass(frozen=True)
class PatchMatrix:
    """Receptive-field patches as rows, ready for GEMM.

    Row r holds the flattened receptive field at output position r, channel
    major then kernel position, exactly the order of a row-major flatten of
    (channels, kernel...) weights.
    """

    data: BitTensor

    def __post_init__(self) -> None:
        if len(self.data.shape.dims) != 2:
            raise ShapeError("PatchMatrix data must be 2-D")

    @property
    def rows(self) -> int:
        return self.data.shape.dims[0]

    @property
    def cols(self) -> int:
        return self.data.shape.dims[1]


def _normalize_input(dims: tuple[int, ...], geom: ConvGeometry):
    """Map 2-D (C,H,W) and 1-D (C,L) inputs onto one (C,H,W) path."""
    if len(dims) == 3:
        if len(geom.kernel) != 2:
            raise ShapeError("2-D input requires a 2-D kernel")
        c, h, w = dims
        kh, kw = geom.kernel
        pad = (geom.padding, geom.padding)
    elif len(dims) == 2:
        if len(geom.kernel) != 1:
            raise ShapeError("1-D input requires a 1-D kernel")
        c, w = dims
        h, kh, kw = 1, 1, geom.kernel[0]
        pad = (0, geom.padding)
    else:
        raise ShapeError(f"im2col expects (C,H,W) or (C,L), got {dims}")
    return c, h, w, kh, kw, pad


def conv_output_dims(dims: tuple[int, ...], geom: ConvGeometry) -> tuple[int, ...]:
    """Spatial output extents of a convolution; raises if the kernel never fits."""
    c, h, w, kh, kw, (ph, pw) = _normalize_input(dims, geom)
    oh = (h + 2 * ph - kh) // geom.stride + 1
    ow = (w + 2 * pw - kw) // geom.stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"kernel {geom.kernel} does not fit padded input {dims} (pad {geom.padding})"
        )
    return (oh, ow) if len(dims) == 3 else (ow,)


def im2col(input: BitTensor, geom: ConvGeometry, pad_value: int = -1) -> PatchMatrix:
    """Lower a convolution input to a patch matrix.

    Padding fills with -1 (bit 0): any third value would leave the +-1
    domain and break the XNOR arithmetic downstream.
    """
    if pad_value != -1:
        raise DomainError("convolution padding must be -1")
    dims = input.shape.dims
    c, h, w, kh, kw, (ph, pw) = _normalize_input(dims, geom)
    conv_output_dims(dims, geom)  # validates fit

    signs = input.to_signs().reshape(c, h, w)
    padded = np.full((c, h + 2 * ph, w + 2 * pw), -1, dtype=np.int8)
    padded[:, ph : ph + h, pw : pw + w] = signs

    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    windows = windows[:, :: geom.stride, :: geom.stride]
    # (C, OH, OW, kh, kw) -> (OH*OW, C*kh*kw), channel-major rows
    patches = windows.transpose(1, 2, 0, 3, 4).reshape(
        windows.shape[1] * windows.shape[2], c * kh * kw
    )
    return PatchMatrix(BitTensor.from_signs(patches))
