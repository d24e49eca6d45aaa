import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sectrees.errors import RangeError
from sectrees.ring import Z64, FixedPointCodec, Ring, truncate

WIDTHS = [8, 64, 128, 192]


def ints(bits):
    return st.integers(0, (1 << bits) - 1)


@pytest.mark.parametrize("bits", WIDTHS)
@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_arith_matches_python_ints(bits, data):
    ring = Ring(bits)
    xs = data.draw(st.lists(ints(bits), min_size=1, max_size=6))
    ys = data.draw(st.lists(ints(bits), min_size=len(xs), max_size=len(xs)))
    x, y = ring.from_ints(np.array(xs, dtype=object)), ring.from_ints(np.array(ys, dtype=object))
    mod = 1 << bits
    assert list(ring.to_ints(ring.add(x, y))) == [(a + b) % mod for a, b in zip(xs, ys)]
    assert list(ring.to_ints(ring.sub(x, y))) == [(a - b) % mod for a, b in zip(xs, ys)]
    assert list(ring.to_ints(ring.mul(x, y))) == [(a * b) % mod for a, b in zip(xs, ys)]
    assert list(ring.to_ints(ring.neg(x))) == [(-a) % mod for a in xs]
    assert int(ring.to_ints(ring.sum(x))) == sum(xs) % mod


@pytest.mark.parametrize("bits", WIDTHS)
def test_matmul_matches_object_product(bits):
    ring = Ring(bits)
    rng = np.random.default_rng(bits)
    a, b = ring.random(rng, (5, 4)), ring.random(rng, (4, 3))
    want = (ring.to_ints(a).dot(ring.to_ints(b))) % (1 << bits)
    assert np.array_equal(ring.to_ints(ring.matmul(a, b)), want)


@pytest.mark.parametrize("bits", WIDTHS)
def test_bytes_round_trip_and_bits(bits):
    ring = Ring(bits)
    x = ring.random(np.random.default_rng(1), (3, 7))
    assert np.array_equal(ring.to_ints(ring.from_bytes(ring.to_bytes(x), (3, 7))), ring.to_ints(x))
    ref = ring.to_ints(x)
    for j in (0, bits // 2, bits - 1):
        assert np.array_equal(ring.bit(x, j), np.vectorize(lambda v: (v >> j) & 1)(ref).astype(np.uint8))


def test_signed_view_and_shift():
    ring = Ring(8)
    x = ring.from_ints(np.array([5, 255, 128, 127], dtype=object))
    assert list(ring.to_signed(x)) == [5, -1, -128, 127]
    assert list(ring.to_ints(ring.shr(x, 2))) == [1, 63, 32, 31]


def test_encode_examples():
    c = FixedPointCodec()
    assert int(c.encode(1.5)) == 1536
    assert int(c.encode(0.0)) == 0
    assert int(c.encode(-0.5)) == 2**64 - 512


def test_decode_examples():
    c = FixedPointCodec()
    assert float(c.decode(np.uint64(1536))) == 1.5
    assert float(c.decode(np.uint64(2**64 - 512))) == -0.5
    assert float(c.decode(np.uint64(1))) == 2**-10


def test_encode_floors_magnitude():
    c = FixedPointCodec()
    assert int(Z64.to_signed(c.encode(-0.0009))) == 0
    assert int(Z64.to_signed(c.encode(-1.0009))) == -1024
    assert int(c.encode(1.0009)) == 1024


def test_encode_range_error():
    c = FixedPointCodec()
    with pytest.raises(RangeError):
        c.encode(2.0**22)
    with pytest.raises(RangeError):
        c.encode(np.array([0.0, -(2.0**22)]))


def test_codec_parse_and_validation():
    assert FixedPointCodec.parse("64:10:22") == FixedPointCodec(64, 10, 22)
    assert str(FixedPointCodec()) == "64:10:22"
    with pytest.raises(ValueError):
        FixedPointCodec(64, 20, 22)
    with pytest.raises(ValueError):
        FixedPointCodec(64, 0, 22)


@settings(max_examples=200, deadline=None)
@given(st.floats(-(2.0**22) + 1, 2.0**22 - 1))
def test_encode_decode_round_trip(x):
    c = FixedPointCodec()
    assert abs(float(c.decode(c.encode(x))) - x) <= 2**-10


@settings(max_examples=200, deadline=None)
@given(st.integers(-(2**30), 2**30), st.integers(-(2**30), 2**30))
def test_encoded_addition_is_exact(x, y):
    c = FixedPointCodec()
    fx, fy = x / 1024, y / 1024
    assert int(Z64.add(c.encode(fx), c.encode(fy))) == int(c.encode(fx + fy))


def _shares_of(ring, v, rng):
    r = ring.random(rng, np.shape(v))
    return r, ring.sub(v, r)


def test_truncate_product_example():
    c = FixedPointCodec()
    ring = c.ring
    prod = ring.mul(c.encode(2.0), c.encode(3.0))
    assert int(prod) == 6291456
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = _shares_of(ring, prod, rng)
        out = int(ring.add(truncate(ring, a, 10, "A"), truncate(ring, b, 10, "B")))
        assert out in (6144, 6145)


def test_truncate_zero():
    ring = Z64
    rng = np.random.default_rng(1)
    a, b = _shares_of(ring, ring.zeros((1000,)), rng)
    out = ring.to_signed(ring.add(truncate(ring, a, 10, "A"), truncate(ring, b, 10, "B")))
    assert set(np.asarray(out, dtype=np.int64).tolist()) <= {0, 1}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1000, 1000), min_size=2, max_size=2), st.integers(0, 2**32))
def test_truncate_error_bound(xy, seed):
    c = FixedPointCodec()
    x, y = xy
    ring = c.ring
    prod = ring.mul(c.encode(x), c.encode(y))
    a, b = _shares_of(ring, prod, np.random.default_rng(seed))
    got = float(c.decode(ring.add(truncate(ring, a, 10, "A"), truncate(ring, b, 10, "B"))))
    assert abs(got - x * y) <= (abs(x) + abs(y) + 2) * 2**-10
