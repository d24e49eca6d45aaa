"""Acceptance checks; the terminal summary prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import math
import os
import time

import numpy as np
import pytest

from helpers import secure_and_oracle
from sectrees.aggregates import discretize, minmax
from sectrees.bench import run_bench
from sectrees.ingest import load_named
from sectrees.protocols import decompose_bits, eq, extract_bit, geq, mul
from sectrees.ring import FixedPointCodec, Ring, truncate
from sectrees.runtime import run_two_party
from sectrees.sharing import reveal, share
from sectrees.train import TrainConfig

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
CODEC = FixedPointCodec()


def criterion(num, title):
    return pytest.mark.criterion(num, title)


def _split(ring, ints, seed):
    return share(ring, ring.from_ints(np.asarray(ints)), np.random.default_rng(seed))


# ---- 1 ------------------------------------------------------------------------

@criterion(1, "exhaustive geq/eq in a 10-bit ring")
def test_exhaustive_comparisons_small_ring():
    ring = Ring(10)
    half = 1 << 9
    x = np.arange(-half, half)
    d = np.arange(-(half - 1), half)
    xs, ds = np.meshgrid(x, d, indexing="ij")
    ys = xs - ds
    ok = (ys >= -half) & (ys < half)
    xs, ys = xs[ok], ys[ok]
    xa, xb = _split(ring, xs, 1)
    ya, yb = _split(ring, ys, 2)

    def party(s, u, v):
        return geq(s, ring, u, v, ring.bits), eq(s, ring, u, v, ring.bits)

    start = time.perf_counter()
    res = run_two_party(party, (xa, ya), (xb, yb), seed=3)
    elapsed = time.perf_counter() - start
    g = res.a[0] ^ res.b[0]
    e = res.a[1] ^ res.b[1]
    assert xs.size > 780_000
    assert np.count_nonzero(g != (xs >= ys)) == 0
    assert np.count_nonzero(e != (xs == ys)) == 0
    assert elapsed < 60, f"took {elapsed:.1f}s"


@criterion(1, "exhaustive geq/eq in a 10-bit ring")
def test_exhaustive_comparisons_fixed_point_bit():
    codec = FixedPointCodec(10, 3, 2)
    ring = codec.ring
    lim = 1 << (codec.frac_bits + codec.int_bits)
    v = np.arange(-lim + 1, lim)
    xs, ys = (a.ravel() for a in np.meshgrid(v, v, indexing="ij"))
    ok = np.abs(xs - ys) < lim
    xs, ys = xs[ok], ys[ok]
    xa, xb = _split(ring, xs, 4)
    ya, yb = _split(ring, ys, 5)

    def party(s, u, w):
        return geq(s, ring, u, w, codec.cmp_bit), eq(s, ring, u, w, codec.cmp_bit)

    res = run_two_party(party, (xa, ya), (xb, yb), seed=6)
    assert np.array_equal(res.a[0] ^ res.b[0], (xs >= ys).astype(np.uint8))
    assert np.array_equal(res.a[1] ^ res.b[1], (xs == ys).astype(np.uint8))


# ---- 2 ------------------------------------------------------------------------

@criterion(2, "bit extraction and decomposition in an 8-bit ring")
def test_bit_extraction_exhaustive():
    ring = Ring(8)
    splits = 64
    values = np.tile(np.arange(256), splits)
    truth = ((values[:, None] >> np.arange(8)) & 1).astype(np.uint8)
    rng = np.random.default_rng(7)
    a = rng.integers(0, 256, values.size).astype(np.uint64)
    b = ring.sub(values.astype(np.uint64), a)

    def party(s, x):
        return [extract_bit(s, ring, x, alpha) for alpha in range(1, 9)], decompose_bits(s, ring, x)

    res = run_two_party(party, (a,), (b,), seed=8)
    bits = np.stack([u ^ v for u, v in zip(res.a[0], res.b[0])], axis=-1)
    dec = res.a[1] ^ res.b[1]
    assert np.array_equal(bits, truth)
    assert np.array_equal(dec, truth)


# ---- 3 ------------------------------------------------------------------------

def _btx_cost(alpha):
    ring = Ring(64)
    xa, xb = _split(ring, [12345], 9)

    def party(s, x):
        with s.chan.scoped_metrics() as m:
            extract_bit(s, ring, x, alpha)
        return m

    res = run_two_party(party, (xa,), (xb,), seed=10)
    return res.a.rounds, res.a.payload_bits


WIDTHS = (8, 16, 32)


@criterion(3, "bit extraction rounds and communication")
def test_btx_rounds():
    for w in WIDTHS:
        rounds, _ = _btx_cost(w + 1)
        assert rounds == math.ceil(math.log2(w)) + 1


@criterion(3, "bit extraction rounds and communication")
def test_btx_bits_match_a_closed_form():
    measured = {w: _btx_cost(w + 1)[1] for w in WIDTHS}
    forms = {
        "2(a-1)+4ceil(log(a-1))": {w: 2 * w + 4 * math.ceil(math.log2(w)) for w in WIDTHS},
        "2(a-1)+4log(a-1)-4": {w: 2 * w + 4 * int(math.log2(w)) - 4 for w in WIDTHS},
    }
    matched = [name for name, f in forms.items() if f == measured]
    print(f"measured payload bits per call: {measured}")
    for name, f in forms.items():
        print(f"  {name}: {f}")
    print(f"matching form: {matched[0] if matched else 'none'}")
    assert matched, f"measured {measured} matches neither closed form"


# ---- 4 ------------------------------------------------------------------------

def _columns(rng, n, cols):
    """Columns with log-uniform widths that keep differences inside the comparison bit."""
    widths = np.exp2(rng.uniform(11, 31, cols)).astype(np.int64)
    lo = rng.integers(-(1 << 30), (1 << 30) - widths)
    return lo + (rng.random((n, cols)) * (widths + 1)).astype(np.int64)


@criterion(4, "discretization against exact equal-width bins")
@pytest.mark.parametrize("p", [2, 3, 5, 8])
def test_discretization_matches_exact_bins(p):
    rng = np.random.default_rng(100 + p)
    ring, a = CODEC.ring, CODEC.frac_bits
    n, vectors, chunk = 1000, 1000, 250
    kept = wrong = 0
    for start in range(0, vectors, chunk):
        data = _columns(rng, n, chunk)
        da, db = _split(ring, data, start + p)
        res = run_two_party(lambda s, x: discretize(s, ring, x, p, CODEC)[0], (da,), (db,), seed=start)
        got = np.argmax(res.a ^ res.b, axis=-1)
        lo, hi = data.min(axis=0), data.max(axis=0)
        width = (hi - lo).astype(object)
        off = (p * (data - lo)).astype(object)
        i = np.arange(1, p, dtype=object)[:, None, None]
        gap = off[None] - i * width[None, None]          # p * (x - h_i), exact
        want = np.sum(gap >= 0, axis=0)
        near = np.any(np.abs(gap) * (1 << (a - 1)) < p * width[None, None], axis=0)
        keep = ~near
        kept += int(keep.sum())
        wrong += int(np.count_nonzero(got[keep] != want[keep].astype(np.int64)))
    frac = wrong / kept
    print(f"p={p}: {wrong} mismatches among {kept} values ({frac:.2e})")
    assert frac < 1e-3


# ---- 5 ------------------------------------------------------------------------

@criterion(5, "tournament min and max")
def test_minmax_exact():
    ring = CODEC.ring
    rng = np.random.default_rng(11)
    lengths = np.arange(2, 258)
    counts = [len(c) for c in np.array_split(np.arange(10_000), lengths.size)]
    total = 0
    for n, k in zip(lengths, counts):
        small = rng.integers(-8, 8, (k // 4, n))     # many ties
        wide = rng.integers(-(1 << 31) + 1, 1 << 31, (k - k // 4, n))
        data = np.concatenate([small, wide])
        da, db = _split(ring, data, int(n))
        res = run_two_party(lambda s, x: minmax(s, ring, x, CODEC.cmp_bit), (da,), (db,), seed=int(n))
        lo = np.asarray(ring.to_signed(ring.add(res.a[0], res.b[0])), dtype=np.int64)
        hi = np.asarray(ring.to_signed(ring.add(res.a[1], res.b[1])), dtype=np.int64)
        assert np.array_equal(lo, data.min(axis=1)), n
        assert np.array_equal(hi, data.max(axis=1)), n
        total += k
    assert total == 10_000


# ---- 6 ------------------------------------------------------------------------

def _dataset(rng, n, f, c):
    x = rng.integers(-(1 << 24), 1 << 24, (n, f))
    w = rng.normal(size=f)
    score = (x / float(1 << 24)) @ w + rng.normal(scale=0.3, size=n)
    edges = np.quantile(score, np.linspace(0, 1, c + 1)[1:-1])
    return x, np.searchsorted(edges, score).astype(np.int64)


def _random_config(rng, model, n, f):
    p, d = int(rng.choice([2, 3])), int(rng.integers(0, 4))
    eps = float(rng.choice([0.0, 0.02, 0.05, 0.1]))
    trees = int(rng.integers(1, 4))
    if model == "DT":
        return TrainConfig(model="DT", bins=p, depth=d, epsilon=eps)
    if model == "RF":
        return TrainConfig(model="RF", bins=p, depth=d, epsilon=eps, trees=trees,
                           sel_feat=int(rng.integers(1, f + 1)), sel_inst=int(rng.integers(n // 2, n + 1)))
    replace = bool(rng.random() < 0.8)
    k = int(rng.integers(1, (2 * f if replace else f) + 1))
    return TrainConfig(model="XT", depth=d, epsilon=eps, trees=trees, sel_feat=k, xt_replace=replace)


def _near_cut(x, ensemble, margin=2):
    """True when some value lies within ``margin`` units of a cut point of the reference."""
    for t in ensemble.trees:
        for j, feat in enumerate(t.features):
            col = x[:, int(feat)]
            if np.any(np.abs(col[:, None] - t.cuts[j][None, :].astype(np.int64)) < margin):
                return True
    return False


@criterion(6, "secure training equals the clear reference")
@pytest.mark.parametrize("model", ["DT", "RF", "XT"])
def test_training_matches_reference(model):
    rng = np.random.default_rng({"DT": 61, "RF": 62, "XT": 63}[model])
    wanted = {"DT": 34, "RF": 33, "XT": 33}[model]
    accepted = rejected = 0
    while accepted < wanted:
        n, f, c = int(rng.integers(10, 201)), int(rng.integers(1, 9)), int(rng.choice([2, 2, 3]))
        x, y = _dataset(rng, n, f, c)
        cfg = _random_config(rng, model, n, f)
        res, ref = secure_and_oracle(cfg, x, y, c, seed=int(rng.integers(1 << 30)))
        if _near_cut(x, ref):
            rejected += 1
            continue
        accepted += 1
        for got, want, other in zip(res.a.trees, ref.trees, res.b.trees):
            assert got.same_structure(want), (cfg, n, f, c)
            assert got.same_structure(other)
    print(f"{model}: {accepted} datasets compared, {rejected} redrawn for values on a cut point")


# ---- 7 ------------------------------------------------------------------------

@criterion(7, "message trace independent of the data")
@pytest.mark.parametrize("cfg", [
    TrainConfig(model="DT", bins=3, depth=3, epsilon=0.05),
    TrainConfig(model="RF", bins=2, trees=4, sel_feat=3, sel_inst=40, depth=2, epsilon=0.05, parallel_trees=2),
    TrainConfig(model="XT", trees=3, sel_feat=6, depth=3, epsilon=0.05),
], ids=["DT", "RF", "XT"])
def test_trace_independent_of_data(cfg):
    rng = np.random.default_rng(70)
    traces = []
    for seed in (1, 2):
        x, y = _dataset(rng, 60, 4, 2)
        res, _ = secure_and_oracle(cfg, x, y, 2, seed=seed)
        traces.append(res.traces)
    assert len(traces[0]["A"]) > 0
    assert traces[0]["A"] == traces[1]["A"]
    assert traces[0]["B"] == traces[1]["B"]


# ---- 8 ------------------------------------------------------------------------

ACCURACY = [("bc", "dt", 0.87), ("bc", "rf", 0.90), ("bc", "xt", 0.93), ("back", "xt", 0.77),
            ("ecg", "dt", 0.99), ("ecg", "rf", 0.99), ("ecg", "xt", 0.99)]


@criterion(8, "cross-validated accuracy over loopback TCP")
@pytest.mark.parametrize("name,model,floor", ACCURACY, ids=[f"{d}-{m}" for d, m, _ in ACCURACY])
def test_accuracy(name, model, floor):
    cfg = TrainConfig.load(os.path.join(CONFIGS, f"{name}_{model}.cfg"))
    data, scale = load_named(name, subsample=2000 if name == "ecg" else None, seed=cfg.seed)
    report = run_bench(name, data, scale, cfg, folds=5, transport="tcp")
    print(f"{name} {model}: mean accuracy {report.mean_accuracy:.4f}, "
          f"{report.total_seconds:.1f}s, {report.total_rounds} rounds")
    assert report.mean_accuracy >= floor


# ---- 9 ------------------------------------------------------------------------

@criterion(9, "truncation error bound")
def test_truncation_bound():
    ring, a = CODEC.ring, CODEC.frac_bits
    rng = np.random.default_rng(90)
    lim = 2.0 ** (CODEC.int_bits / 2)          # keeps every product in range
    total = violations = 0
    for start in range(0, 1_000_000, 250_000):
        x, y = rng.uniform(-lim, lim, 250_000), rng.uniform(-lim, lim, 250_000)
        xa, xb = share(ring, CODEC.encode(x), rng)
        ya, yb = share(ring, CODEC.encode(y), rng)

        def party(s, u, v):
            return truncate(ring, mul(s, ring, u, v), a, s.role)

        res = run_two_party(party, (xa, ya), (xb, yb), seed=start)
        got = CODEC.decode(reveal(ring, res.a, res.b))
        bound = (np.abs(x) + np.abs(y) + 2) * 2.0 ** -a
        violations += int(np.count_nonzero(np.abs(got - x * y) > bound))
        total += x.size
    rate = violations / total
    limit = 10 * 2.0 ** -(CODEC.total_bits - (CODEC.frac_bits + CODEC.int_bits))
    print(f"{violations} violations in {total} products (rate {rate:.2e}, limit {limit:.2e})")
    assert total == 1_000_000
    assert rate < limit
