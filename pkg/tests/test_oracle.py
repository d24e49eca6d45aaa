from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sectrees.oracle import (gini_scores, min_instances, oracle_bins, oracle_cuts, oracle_disc, oracle_dt,
                             oracle_id3, oracle_rf, oracle_xt)


def onehot(bins, p):
    return np.eye(p, dtype=np.int64)[bins]


def recursive_id3(xb, y, p, c, depth, cutoff):
    """Textbook recursion with exact fractions; returns {(level, index): (counts, classify, split)}."""
    out = {}

    def grow(rows, level, index):
        counts = np.bincount(y[rows], minlength=c) if len(rows) else np.zeros(c, dtype=np.int64)
        t = len(rows)
        pure = t == 0 or np.any(counts == t)
        if level == depth or pure or t < cutoff:
            out[(level, index)] = (counts, True, None)
            return
        best, best_f = None, None
        for f in range(xb.shape[1]):
            score = Fraction(0)
            for v in range(p):
                sub = y[rows][xb[rows, f] == v]
                if len(sub):
                    score += Fraction(int(np.sum(np.bincount(sub, minlength=c) ** 2)), len(sub))
            if best is None or score > best:
                best, best_f = score, f
        out[(level, index)] = (counts, False, best_f)
        for v in range(p):
            grow(rows[xb[rows, best_f] == v], level + 1, index * p + v)

    grow(np.arange(len(y)), 0, 0)
    return out


def test_min_instances_values():
    assert min_instances(0.05, 455) == 23
    assert min_instances(0.05, 200) == 11
    assert min_instances(0.01, 248) == 3
    assert min_instances(0.0, 100) == 1


def test_cuts_and_bins():
    assert list(oracle_cuts(0, 150 * 1024, 6, 10)) == [c * 150 for c in (170, 341, 512, 682, 853)]
    assert list(oracle_cuts(-100, 100, 2, 10)) == [0]
    assert list(oracle_bins(np.array([-5, 0, 3, 10]), np.array([0, 10]))) == [0, 1, 1, 2]


def test_disc_shapes():
    data = np.array([[0, 10], [5, 20], [10, 30]])
    cuts, ohe = oracle_disc(data, 2, 10)
    assert cuts.shape == (2, 1) and ohe.shape == (3, 2, 2)
    assert ohe[:, 0, :].argmax(axis=1).tolist() == [0, 1, 1]


def test_gini_scores_match_fractions():
    rng = np.random.default_rng(0)
    counts = rng.integers(0, 6, (3, 4, 3, 2))
    counts[0, 1, 2] = 0
    num, den = gini_scores(counts)
    for i in range(3):
        for f in range(4):
            want = sum((Fraction(int((counts[i, f, v] ** 2).sum()), int(counts[i, f, v].sum()))
                        for v in range(3) if counts[i, f, v].sum()), Fraction(0))
            assert Fraction(int(num[i, f]), int(den[i, f])) == want


def test_perfect_separator_at_root():
    y = np.array([0, 0, 0, 1, 1, 1])
    constant = np.zeros(6, dtype=np.int64)
    x = np.stack([onehot(constant, 2), onehot(y, 2)], axis=1)
    t = oracle_id3(x, onehot(y, 2), 1, 0.0)
    assert t["split"][0].tolist() == [1]
    assert t["counts"][1].tolist() == [[3, 0], [0, 3]]


def test_identical_columns_pick_lowest_index():
    rng = np.random.default_rng(1)
    col = rng.integers(0, 2, 20)
    y = rng.integers(0, 2, 20)
    x = np.stack([onehot(col, 2)] * 4, axis=1)
    assert oracle_id3(x, onehot(y, 2), 1, 0.0)["split"][0].tolist() == [0]


def test_all_same_label_classifies_root():
    x = onehot(np.array([0, 1, 2, 1]), 3)[:, None, :]
    t = oracle_id3(x, onehot(np.zeros(4, dtype=np.int64), 2), 2, 0.05)
    assert t["classify"][0].tolist() == [True]
    assert t["counts"][0].tolist() == [[4, 0]]
    assert not any(fl.any() for fl in t["classify"][1:])


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 40), f=st.integers(1, 4), p=st.integers(2, 3), c=st.integers(2, 3),
       depth=st.integers(0, 3), eps=st.sampled_from([0.0, 0.05, 0.2]), seed=st.integers(0, 2**32))
def test_matches_recursive_id3(n, f, p, c, depth, eps, seed):
    rng = np.random.default_rng(seed)
    xb = rng.integers(0, p, (n, f))
    y = rng.integers(0, c, n)
    t = oracle_id3(onehot(xb, p), onehot(y, c), depth, eps)
    ref = recursive_id3(xb, y, p, c, depth, min_instances(eps, n))
    for (level, i), (counts, classify, split) in ref.items():
        assert t["counts"][level][i].tolist() == counts.tolist()
        assert bool(t["classify"][level][i]) == classify
        if split is not None:
            assert int(t["split"][level][i]) == split
    # one classify flag per root-to-leaf path
    flags = t["classify"][0].astype(int)
    for level in range(1, depth + 1):
        flags = np.repeat(flags, p) + t["classify"][level].astype(int)
    assert np.all(flags == 1)


def test_pure_function():
    rng = np.random.default_rng(3)
    x, y = onehot(rng.integers(0, 3, (30, 3)), 3), onehot(rng.integers(0, 2, 30), 2)
    a, b = oracle_id3(x, y, 2, 0.05), oracle_id3(x, y, 2, 0.05)
    assert all(np.array_equal(u, v) for k in a for u, v in zip(a[k], b[k]))


def test_identity_selection_reduces_to_dt():
    rng = np.random.default_rng(4)
    data = rng.integers(-5000, 5000, (25, 3))
    y = rng.integers(0, 2, 25)
    rf = oracle_rf(data, y, 2, 3, 2, 0.05, np.arange(3)[None], np.arange(25)[None])
    dt = oracle_dt(data, y, 2, 3, 2, 0.05)
    assert rf.trees[0].same_structure(dt.trees[0])


def test_xt_half_ratio_is_midpoint():
    data = np.array([[0], [40 * 1024], [100 * 1024], [60 * 1024]])
    y = np.array([0, 0, 1, 1])
    m = oracle_xt(data, y, 2, 1, 0.0, np.array([[0]]), np.array([[512]]))
    assert int(m.trees[0].cuts[0, 0]) == 50 * 1024
    assert m.trees[0].counts[1].tolist() == [[2, 0], [0, 2]]


def test_xt_constant_feature_goes_up():
    data = np.full((5, 1), 7 * 1024)
    y = np.array([0, 1, 0, 1, 0])
    m = oracle_xt(data, y, 2, 1, 0.0, np.array([[0]]), np.array([[300]]))
    assert int(m.trees[0].cuts[0, 0]) == 7 * 1024
    assert m.trees[0].counts[1].tolist() == [[0, 0], [3, 2]]
