import numpy as np
import pytest

from anybcq import BitPlaneSet, UsageError, pack_signs, unpack_signs


@pytest.mark.parametrize("cols", [1, 7, 32, 33, 64, 100])
def test_pack_unpack_identity(cols):
    rng = np.random.default_rng(cols)
    codes = np.where(rng.random((3, cols)) < 0.5, -1, 1).astype(np.int8)
    words = pack_signs(codes)
    assert words.shape == (3, (cols + 31) // 32)
    assert np.array_equal(unpack_signs(words, cols), codes)


def test_bit_addressing():
    # bit j of word w covers column w*32 + j; stored 1 means code +1
    cols = 70
    codes = -np.ones((1, cols), dtype=np.int8)
    codes[0, 0] = 1
    codes[0, 33] = 1
    codes[0, 69] = 1
    words = pack_signs(codes)
    assert words[0, 0] == 1            # bit 0
    assert words[0, 1] == 1 << 1       # column 33 = word 1, bit 1
    assert words[0, 2] == 1 << 5       # column 69 = word 2, bit 5


def test_padding_bits_zero():
    codes = np.ones((2, 40), dtype=np.int8)  # +1 everywhere, 24 pad bits
    words = pack_signs(codes)
    assert words.shape == (2, 2)
    assert np.all(words[:, 1] == np.uint32(0x000000FF))


def test_bitplaneset_roundtrip_and_prefix():
    rng = np.random.default_rng(9)
    codes = np.where(rng.random((4, 5, 45)) < 0.5, -1, 1).astype(np.int8)
    planes = BitPlaneSet.from_codes(codes)
    assert planes.planes == 4 and planes.rows == 5 and planes.cols == 45
    assert np.array_equal(planes.codes(), codes)
    assert np.array_equal(planes.codes(2), codes[2])
    two = planes.prefix(2)
    assert two.planes == 2
    assert two.words.base is not None  # view, not a copy
    assert np.array_equal(two.codes(), codes[:2])
    with pytest.raises(UsageError):
        planes.prefix(0)
    with pytest.raises(UsageError):
        planes.prefix(5)


def test_equality_is_bytewise():
    codes = np.ones((1, 2, 10), dtype=np.int8)
    a = BitPlaneSet.from_codes(codes)
    b = BitPlaneSet.from_codes(codes.copy())
    assert a == b
    flipped = codes.copy()
    flipped[0, 0, 3] = -1
    assert a != BitPlaneSet.from_codes(flipped)
