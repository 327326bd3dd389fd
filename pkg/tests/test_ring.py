import numpy as np
import pytest
from hypothesis import given, strategies as st

from ppsr.errors import MagnitudeOverflow
from ppsr.ring import FixedCodec, Ring

R = Ring()
C = FixedCodec()
TWO64 = 2**64

u64 = st.integers(min_value=0, max_value=TWO64 - 1)


def test_add_examples():
    x = 123456789
    assert R.add(0, x) == x
    assert R.add(TWO64 - 1, 1) == 0
    assert R.add(3, 5) == 8


def test_mul_examples():
    x = 987654321
    assert R.mul(1, x) == x
    assert R.mul(2**63, 2) == 0
    assert R.mul(6, 7) == 42


def test_encode_examples():
    assert C.encode(1.5) == 98304
    assert C.encode(0.0) == 0
    assert C.encode(-0.25) == TWO64 - 16384


def test_decode_examples():
    assert C.decode(98304) == 1.5
    assert C.decode(0) == 0.0
    assert C.decode(TWO64 - 16384) == -0.25


def test_encode_rounds_half_to_even():
    ulp = C.ulp
    assert C.encode(0.5 * ulp) == 0
    assert C.encode(1.5 * ulp) == 2
    assert C.encode(2.5 * ulp) == 2


def test_encode_range_errors():
    with pytest.raises(MagnitudeOverflow):
        C.encode(2.0**47)
    with pytest.raises(MagnitudeOverflow):
        C.encode(np.array([0.0, -(2.0**47)]))
    with pytest.raises(MagnitudeOverflow):
        C.encode(float("nan"))
    # just inside the bound is fine
    assert C.decode(C.encode(2.0**47 - 1)) == 2.0**47 - 1


def test_round_trip_property():
    rng = np.random.default_rng(0)
    x = rng.uniform(-(2**10), 2**10, 100_000)
    err = np.abs(C.decode(C.encode(x)) - x)
    assert err.max() <= 2.0 ** (-C.precision_bits - 1)


@given(st.floats(-1000, 1000), st.floats(-1000, 1000))
def test_encoding_is_additive(x, y):
    s = R.add(C.encode(x), C.encode(y))
    assert abs(C.decode(s) - (x + y)) <= 2.0**-C.precision_bits


@given(st.integers(-(2**40), 2**40))
def test_twos_complement_symmetry(k):
    x = k / C.scale
    assert C.encode(-x) == R.neg(C.encode(x))


@given(u64, u64)
def test_scalar_ops_match_python_ints(a, b):
    assert R.add(a, b) == (a + b) % TWO64
    assert R.sub(a, b) == (a - b) % TWO64
    assert R.mul(a, b) == (a * b) % TWO64
    assert R.add(a, R.neg(a)) == 0


def test_vector_ops_match_python_ints():
    rng = np.random.default_rng(1)
    a, b = R.random(rng, 500), R.random(rng, 500)
    for got, op in ((R.add(a, b), lambda p, q: p + q), (R.sub(a, b), lambda p, q: p - q), (R.mul(a, b), lambda p, q: p * q)):
        assert [int(v) for v in got] == [op(int(p), int(q)) % TWO64 for p, q in zip(a, b)]


def test_narrow_ring_wraps():
    r = Ring(16)
    assert r.add(2**16 - 1, 1) == 0
    assert r.mul(2**15, 2) == 0
    arr = r.mul(np.array([2**15, 3], dtype=np.uint64), np.array([2, 5], dtype=np.uint64))
    assert arr.tolist() == [0, 15]
    assert r.to_signed(2**16 - 1) == -1
    codec = FixedCodec(4, r)
    assert codec.decode(codec.encode(-1.25)) == -1.25
    with pytest.raises(MagnitudeOverflow):
        codec.encode(2.0**11)


def test_signed_view_threshold():
    assert R.to_signed(2**63 - 1) == 2**63 - 1
    assert R.to_signed(2**63) == -(2**63)
    assert R.to_signed(np.array([TWO64 - 1], dtype=np.uint64)).tolist() == [-1]


def test_invalid_parameters():
    with pytest.raises(ValueError):
        Ring(65)
    with pytest.raises(ValueError):
        FixedCodec(63, Ring(64))
