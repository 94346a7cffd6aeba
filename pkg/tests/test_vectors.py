import numpy as np
import pytest
from hypothesis import given, strategies as st

from stosign.vectors import (
    CodecError,
    Purpose,
    as_gradient,
    as_signs,
    derive_stream,
    pack_signs,
    packed_size,
    payload_bits,
    unpack_signs,
)


def test_pack_all_plus_is_ff():
    assert pack_signs(np.ones(8, dtype=np.int8)) == b"\xff"


def test_pack_all_minus_is_zero_byte():
    assert pack_signs(-np.ones(8, dtype=np.int8)) == b"\x00"


def test_pack_lsb_first():
    assert pack_signs([1, -1, 1]) == b"\x05"


@pytest.mark.parametrize("raw,d,expected", [
    (b"\x05", 3, [1, -1, 1]),
    (b"\xff", 8, [1] * 8),
    (b"\x00", 1, [-1]),
])
def test_unpack_examples(raw, d, expected):
    np.testing.assert_array_equal(unpack_signs(raw, d), expected)


def test_unpack_length_mismatch():
    with pytest.raises(CodecError):
        unpack_signs(b"\x00\x00", 3)
    with pytest.raises(CodecError):
        unpack_signs(b"", 1)


def test_pack_rejects_non_signs():
    with pytest.raises(ValueError):
        pack_signs([1, 0, -1])


def test_sizes():
    assert packed_size(1) == 1
    assert packed_size(8) == 1
    assert packed_size(9) == 2
    assert payload_bits(1000) == 1000


@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=300))
def test_pack_round_trip(signs):
    raw = pack_signs(signs)
    assert len(raw) == packed_size(len(signs))
    np.testing.assert_array_equal(unpack_signs(raw, len(signs)), signs)


@given(st.integers(1, 64))
def test_pad_bits_are_zero(d):
    raw = pack_signs(np.ones(d, dtype=np.int8))
    used = d - 8 * (len(raw) - 1)
    assert raw[-1] == (1 << used) - 1


def test_as_gradient_rejects_nan_and_shape():
    with pytest.raises(ValueError):
        as_gradient([1.0, np.nan])
    with pytest.raises(ValueError):
        as_gradient(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        as_gradient([1.0, 2.0], d=3)


def test_as_signs_dtype():
    assert as_signs([1, -1]).dtype == np.int8


def test_stream_is_reproducible():
    a = derive_stream(7, 1, 1, Purpose.COMPRESS).random(1000)
    b = derive_stream(7, 1, 1, Purpose.COMPRESS).random(1000)
    np.testing.assert_array_equal(a, b)


def test_streams_for_different_workers_are_uncorrelated():
    a = derive_stream(7, 1, 1, Purpose.COMPRESS).random(100_000)
    b = derive_stream(7, 1, 2, Purpose.COMPRESS).random(100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


def test_streams_for_different_purposes_differ():
    a = derive_stream(7, 1, 1, 0).random(16)
    b = derive_stream(7, 1, 1, 1).random(16)
    assert not np.array_equal(a, b)


def test_large_seed_accepted():
    derive_stream(2**70 + 3, 0, 0, Purpose.INIT).random()
