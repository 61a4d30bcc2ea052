import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhalf import (
    BitTensor,
    ConvGeometry,
    DomainError,
    IntTensor,
    Shape,
    ShapeError,
    im2col,
    pack_bits,
    signed_width,
)

signs_lists = st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=200)


class TestShape:
    def test_basic_properties(self):
        s = Shape((3, 4, 70))
        assert s.size == 3 * 4 * 70
        assert s.rows == 12
        assert s.row_len == 70
        assert s.words_per_row == 2

    @pytest.mark.parametrize("dims", [(), (0,), (3, 0, 2), (-1,)])
    def test_rejects_bad_extents(self, dims):
        with pytest.raises(ShapeError):
            Shape(dims)


class TestSignedWidth:
    @pytest.mark.parametrize("mag,bits", [(0, 1), (1, 2), (25, 6), (31, 6), (32, 7), (1024, 12)])
    def test_values(self, mag, bits):
        assert signed_width(mag) == bits


class TestPackBits:
    def test_all_plus_ones(self):
        t = pack_bits([1, 1, 1, 1])
        assert t.words[0, 0] == 0b1111

    def test_all_minus_ones(self):
        t = pack_bits([-1, -1, -1, -1])
        assert t.words[0, 0] == 0

    def test_mixed_lsb_first(self):
        # hand-enumerated: bits 0,3,4 set -> 0b11001 = 25, padding stays 0
        t = pack_bits([1, -1, -1, 1, 1])
        assert t.words[0, 0] == 0b11001
        assert t.shape.dims == (5,)

    @pytest.mark.parametrize("bad", [[0], [1, 2], [1.5], [1, -1, 0]])
    def test_rejects_non_sign_values(self, bad):
        with pytest.raises(DomainError):
            pack_bits(bad)

    @given(signs_lists)
    @settings(max_examples=200)
    def test_round_trip(self, values):
        t = pack_bits(values)
        assert t.to_signs().tolist() == values

    def test_multidim_round_trip(self, rng):
        arr = rng.choice([-1, 1], size=(3, 5, 67))
        t = BitTensor.from_signs(arr)
        assert np.array_equal(t.to_signs(), arr)
        assert t.words.shape == (15, 2)

    def test_padding_bits_enforced(self):
        words = np.array([[0b100000]], dtype=np.uint64)  # bit 5 set beyond length 5
        with pytest.raises(DomainError):
            BitTensor(Shape((5,)), words)

    def test_immutable(self):
        t = pack_bits([1, -1])
        with pytest.raises(ValueError):
            t.words[0, 0] = 3


class TestIntTensor:
    def test_width_bounds(self):
        IntTensor(np.array([-32, 31]), 6)
        with pytest.raises(DomainError):
            IntTensor(np.array([32]), 6)
        with pytest.raises(DomainError):
            IntTensor(np.array([-33]), 6)

    def test_requires_integers(self):
        with pytest.raises(DomainError):
            IntTensor(np.array([1.5]), 8)


def gather_oracle(signs: np.ndarray, kernel, stride: int, padding) -> np.ndarray:
    """Brute-force patch gather used as the im2col oracle."""
    c, h, w = signs.shape
    kh, kw = kernel
    ph, pw = padding
    padded = np.full((c, h + 2 * ph, w + 2 * pw), -1, dtype=np.int8)
    padded[:, ph : ph + h, pw : pw + w] = signs
    out_h = (h + 2 * ph - kh) // stride + 1
    out_w = (w + 2 * pw - kw) // stride + 1
    rows = []
    for oy in range(out_h):
        for ox in range(out_w):
            patch = padded[:, oy * stride : oy * stride + kh, ox * stride : ox * stride + kw]
            rows.append(patch.reshape(-1))
    return np.asarray(rows)


class TestIm2col:
    def test_3x3_with_2x2_kernel(self, rng):
        signs = rng.choice([-1, 1], size=(1, 3, 3))
        pm = im2col(BitTensor.from_signs(signs), ConvGeometry((2, 2)))
        assert (pm.rows, pm.cols) == (4, 4)
        expected_row0 = [signs[0, 0, 0], signs[0, 0, 1], signs[0, 1, 0], signs[0, 1, 1]]
        got = pm.data.to_signs()
        assert got[0].tolist() == expected_row0
        assert np.array_equal(got, gather_oracle(signs, (2, 2), 1, (0, 0)))

    def test_single_placement_is_flatten(self, rng):
        signs = rng.choice([-1, 1], size=(1, 2, 2))
        pm = im2col(BitTensor.from_signs(signs), ConvGeometry((2, 2)))
        assert (pm.rows, pm.cols) == (1, 4)
        assert pm.data.to_signs()[0].tolist() == signs.reshape(-1).tolist()

    def test_1d_length_100_kernel_16(self, rng):
        signs = rng.choice([-1, 1], size=(1, 100))
        pm = im2col(BitTensor.from_signs(signs), ConvGeometry((16,)))
        assert (pm.rows, pm.cols) == (85, 16)

    @pytest.mark.parametrize(
        "shape,kernel,stride,padding",
        [
            ((1, 5, 5), (3, 3), 1, 0),
            ((3, 6, 7), (3, 3), 1, 1),
            ((2, 8, 8), (5, 5), 2, 2),
            ((4, 4, 4), (2, 2), 2, 0),
        ],
    )
    def test_matches_gather_oracle(self, rng, shape, kernel, stride, padding):
        signs = rng.choice([-1, 1], size=shape)
        geom = ConvGeometry(kernel, stride, padding)
        pm = im2col(BitTensor.from_signs(signs), geom)
        expected = gather_oracle(signs, kernel, stride, (padding, padding))
        assert np.array_equal(pm.data.to_signs(), expected)

    def test_1d_matches_gather_oracle(self, rng):
        signs = rng.choice([-1, 1], size=(3, 20))
        pm = im2col(BitTensor.from_signs(signs), ConvGeometry((4,), 2, 1))
        expected = gather_oracle(signs[:, None, :], (1, 4), 2, (0, 1))
        assert np.array_equal(pm.data.to_signs(), expected)

    def test_kernel_too_large(self, rng):
        signs = rng.choice([-1, 1], size=(1, 3, 3))
        with pytest.raises(ShapeError):
            im2col(BitTensor.from_signs(signs), ConvGeometry((5, 5)))

    def test_pad_value_must_be_minus_one(self, rng):
        signs = rng.choice([-1, 1], size=(1, 3, 3))
        with pytest.raises(DomainError):
            im2col(BitTensor.from_signs(signs), ConvGeometry((2, 2)), pad_value=0)
