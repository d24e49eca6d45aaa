"""In-the-clear reference pipelines on fixed-point integers.

These mirror the secure protocols decision for decision: floor-based cut
points, the same Gini cross-multiplication tournament with lowest-index
tie-breaking, empty-bin handling, the same stopping rules and the same
treatment of dummy nodes.  Scores are compared as exact Python integers.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .model import Ensemble, Tree
from .ring import FixedPointCodec


def min_instances(eps: float, n: int) -> int:
    """Smallest node size that keeps splitting: nodes with at most eps*n instances stop."""
    return int(Fraction(str(eps)) * n) + 1


def oracle_minmax(values: np.ndarray) -> tuple[int, int]:
    return int(np.min(values)), int(np.max(values))


def oracle_cuts(lo: int, hi: int, p: int, frac_bits: int) -> np.ndarray:
    """Equal-width cut points lo + floor(floor(2^a i/p) * (hi - lo) / 2^a)."""
    width = int(hi) - int(lo)
    return np.array([int(lo) + ((((i << frac_bits) // p) * width) >> frac_bits) for i in range(1, p)],
                    dtype=np.int64)


def oracle_bins(column: np.ndarray, cuts: np.ndarray) -> np.ndarray:
    """Bin index per value: how many cut points it reaches (values on a cut go up)."""
    return np.sum(np.asarray(column)[:, None] >= np.asarray(cuts)[None, :], axis=1)


def oracle_disc(data: np.ndarray, p: int, frac_bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Cut points ``(f, p-1)`` and one-hot bins ``(n, f, p)`` of an encoded matrix."""
    n, f = data.shape
    cuts = np.stack([oracle_cuts(*oracle_minmax(data[:, j]), p, frac_bits) for j in range(f)])
    bins = np.stack([oracle_bins(data[:, j], cuts[j]) for j in range(f)], axis=1)
    return cuts, np.eye(p, dtype=np.int64)[bins]


def _tournament(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Index of the best score num/den per row by pairwise cross-multiplied comparison."""
    nodes, width = num.shape
    idx = np.tile(np.arange(width), (nodes, 1))
    num, den = num.copy(), den.copy()
    while idx.shape[1] > 1:
        w = idx.shape[1]
        pairs = w // 2
        l, r = slice(0, 2 * pairs, 2), slice(1, 2 * pairs, 2)
        left_wins = num[:, l] * den[:, r] >= num[:, r] * den[:, l]
        nidx = np.where(left_wins, idx[:, l], idx[:, r])
        nnum = np.where(left_wins, num[:, l], num[:, r])
        nden = np.where(left_wins, den[:, l], den[:, r])
        if w % 2:
            nidx = np.concatenate([nidx, idx[:, -1:]], axis=1)
            nnum = np.concatenate([nnum, num[:, -1:]], axis=1)
            nden = np.concatenate([nden, den[:, -1:]], axis=1)
        idx, num, den = nidx, nnum, nden
    return idx[:, 0]


def gini_scores(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Numerator and denominator of sum_v (sum_y n_vy^2) / t_v per (node, feature).

    ``counts`` has shape ``(nodes, features, bins, classes)``.  Empty bins use
    a denominator of 1, so they contribute nothing.
    """
    c = counts.astype(object)
    t = c.sum(axis=3)
    g = (c * c).sum(axis=3)
    tp = t + (t == 0)
    p = counts.shape[2]
    den = np.prod(tp, axis=2)
    num = np.zeros(den.shape, dtype=object)
    for v in range(p):
        others = np.ones(den.shape, dtype=object)
        for w in range(p):
            if w != v:
                others = others * tp[:, :, w]
        num = num + g[:, :, v] * others
    return num, den


def oracle_id3(x: np.ndarray, y: np.ndarray, depth: int, eps: float, n_ref: int | None = None) -> dict:
    """Complete tree over one-hot data.

    Args:
        x: ``(n, F, p)`` 0/1 feature bins.
        y: ``(n, c)`` 0/1 class indicators.
        depth: Public tree depth.
        eps: Stop fraction; nodes with at most ``eps * n_ref`` instances classify.
        n_ref: Instance count eps refers to (defaults to n).

    Returns:
        ``{"split": [...], "counts": [...], "classify": [...]}`` as in :class:`Tree`.
    """
    n, F, p = x.shape
    cutoff = min_instances(eps, n if n_ref is None else n_ref)
    x = x.astype(np.int64)
    y = y.astype(np.int64)
    ind = np.ones((n, 1), dtype=np.int64)
    done = np.zeros(1, dtype=bool)
    split, counts, classify = [], [], []
    for level in range(depth + 1):
        cnt = ind.T @ y
        t = cnt.sum(axis=1)
        counts.append(cnt)
        if level == depth:
            stop = np.ones_like(done)
        else:
            same = np.any(cnt == t[:, None], axis=1)
            stop = same | (t < cutoff)
        classify.append(stop & ~done)
        done = done | stop
        if level == depth:
            break
        nodes = ind.shape[1]
        z = (ind[:, :, None] * y[:, None, :]).reshape(n, -1)
        per = (x.reshape(n, F * p).T @ z).reshape(F, p, nodes, -1).transpose(2, 0, 1, 3)
        num, den = gini_scores(per)
        sel = _tournament(num, den)
        chosen = x[:, sel, :]                       # (n, nodes, p)
        ind = (ind[:, :, None] * chosen).reshape(n, -1)
        done = np.repeat(done, p)
        split.append(sel.astype(np.int64))
    return {"split": split, "counts": counts, "classify": classify}


def _labels_onehot(y: np.ndarray, classes: int) -> np.ndarray:
    return np.eye(classes, dtype=np.int64)[np.asarray(y, dtype=np.int64)]


def oracle_rf(data: np.ndarray, y: np.ndarray, classes: int, p: int, depth: int, eps: float,
              features: np.ndarray, instances: np.ndarray, codec: FixedPointCodec = FixedPointCodec(),
              kind: str = "RF", scale: float = 1000.0) -> Ensemble:
    """Random forest on encoded data with injected feature and instance draws.

    Args:
        data: ``(n, f)`` signed fixed-point integers.
        features: ``(T, k)`` selected feature indices per tree.
        instances: ``(T, s)`` bootstrap instance indices per tree.
    """
    cuts, ohe = oracle_disc(data, p, codec.frac_bits)
    yo = _labels_onehot(y, classes)
    trees = []
    for feats, rows in zip(np.asarray(features), np.asarray(instances)):
        t = oracle_id3(ohe[rows][:, feats, :], yo[rows], depth, eps, len(rows))
        trees.append(Tree(p, depth, t["split"], t["counts"], t["classify"], np.asarray(feats, dtype=np.int64),
                          cuts[feats]))
    return Ensemble(kind, trees, classes, codec, scale)


def oracle_dt(data, y, classes, p, depth, eps, codec=FixedPointCodec(), scale=1000.0) -> Ensemble:
    n, f = data.shape
    return oracle_rf(data, y, classes, p, depth, eps, np.arange(f)[None], np.arange(n)[None], codec, "DT", scale)


def oracle_xt(data: np.ndarray, y: np.ndarray, classes: int, depth: int, eps: float,
              features: np.ndarray, ratios: np.ndarray, codec: FixedPointCodec = FixedPointCodec(),
              scale: float = 1000.0) -> Ensemble:
    """Extra-trees on encoded data with injected features ``(T, k)`` and ratios ``(T, k)``.

    The cut point of a column is min + floor(r * (max - min) / 2^a).
    """
    lo, hi = data.min(axis=0), data.max(axis=0)
    yo = _labels_onehot(y, classes)
    a = codec.frac_bits
    trees = []
    for feats, rs in zip(np.asarray(features), np.asarray(ratios)):
        alpha = np.array([int(lo[j]) + ((int(r) * (int(hi[j]) - int(lo[j]))) >> a) for j, r in zip(feats, rs)],
                         dtype=np.int64)
        upper = (data[:, feats] >= alpha[None, :]).astype(np.int64)
        x = np.stack([1 - upper, upper], axis=2)
        t = oracle_id3(x, yo, depth, eps, len(data))
        trees.append(Tree(2, depth, t["split"], t["counts"], t["classify"], np.asarray(feats, dtype=np.int64),
                          alpha[:, None]))
    return Ensemble("XT", trees, classes, codec, scale)
