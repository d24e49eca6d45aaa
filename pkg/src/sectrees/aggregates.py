"""Tournament min/max and equal-width discretization of shared columns."""

from __future__ import annotations

import numpy as np

from .protocols import Session, and_bits, bit_to_ring, geq, mul, not_bits
from .ring import FixedPointCodec, Ring, truncate


def minmax(sess: Session, ring: Ring, d: np.ndarray, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    """Shares of the minimum and maximum along the last axis.

    The first layer compares neighbouring elements once and derives the max
    from the min; later layers run the min and max tournaments side by side.
    Each layer costs one comparison, one conversion and one multiplication.
    An unpaired element passes to the next layer unchanged.
    """
    n = d.shape[-1]
    if n < 1:
        raise ValueError("minmax needs at least one element")
    if n == 1:
        return d[..., 0].copy(), d[..., 0].copy()
    pairs = n // 2
    d1, d2 = d[..., 0:2 * pairs:2], d[..., 1:2 * pairs:2]
    c = bit_to_ring(sess, ring, geq(sess, ring, d2, d1, alpha))
    lo = ring.add(d2, mul(sess, ring, c, ring.sub(d1, d2)))
    hi = ring.sub(ring.add(d1, d2), lo)
    if n % 2:
        lo = np.concatenate([lo, d[..., -1:]], axis=-1)
        hi = np.concatenate([hi, d[..., -1:]], axis=-1)
    while lo.shape[-1] > 1:
        m = lo.shape[-1]
        pairs = m // 2
        l1, l2 = lo[..., 0:2 * pairs:2], lo[..., 1:2 * pairs:2]
        h1, h2 = hi[..., 0:2 * pairs:2], hi[..., 1:2 * pairs:2]
        # rows: [l2 >= l1, h2 >= h1]
        bits = geq(sess, ring, np.stack([l2, h2]), np.stack([l1, h1]), alpha)
        c = bit_to_ring(sess, ring, bits)
        diff = np.stack([ring.sub(l1, l2), ring.sub(h2, h1)])
        base = np.stack([l2, h1])
        sel = ring.add(base, mul(sess, ring, c, diff))
        nlo, nhi = sel[0], sel[1]
        if m % 2:
            nlo = np.concatenate([nlo, lo[..., -1:]], axis=-1)
            nhi = np.concatenate([nhi, hi[..., -1:]], axis=-1)
        lo, hi = nlo, nhi
    return lo[..., 0], hi[..., 0]


def bin_constants(p: int, frac_bits: int) -> list[int]:
    """Public fixed-point fractions floor(2^a * i / p) for i = 1..p-1."""
    return [(i << frac_bits) // p for i in range(1, p)]


def thresholds(sess: Session, ring: Ring, lo: np.ndarray, hi: np.ndarray, p: int,
               codec: FixedPointCodec) -> np.ndarray:
    """Shares of the p-1 equal-width cut points, shape ``lo.shape + (p-1,)``.

    Scaling the shared range by a public constant is local; the product is
    truncated locally, so each cut point may exceed the exact one by 1 LSB.
    """
    if p < 2:
        raise ValueError("need at least two bins")
    rng_ = ring.sub(hi, lo)
    consts = ring.from_ints(np.array(bin_constants(p, codec.frac_bits), dtype=np.int64))
    scaled = ring.mul(rng_[..., None], consts)
    cut = truncate(ring, scaled, codec.frac_bits, sess.role)
    return ring.add(lo[..., None], cut)


def one_hot_from_geq(sess: Session, e: np.ndarray) -> np.ndarray:
    """One-hot bins from e_j = [x >= h_j], j = 1..p-1 along the last axis (one round when p > 2)."""
    p = e.shape[-1] + 1
    first = not_bits(sess, e[..., :1])
    last = e[..., -1:]
    if p == 2:
        return np.concatenate([first, last], axis=-1)
    mid = and_bits(sess, e[..., :-1], not_bits(sess, e[..., 1:]))
    return np.concatenate([first, mid, last], axis=-1)


def discretize(sess: Session, ring: Ring, data: np.ndarray, p: int, codec: FixedPointCodec,
               alpha: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width binning of every column of an ``n x f`` shared matrix.

    Returns Z_2 shares of the one-hot matrix (``n x f x p``) and ring shares
    of the thresholds (``f x (p-1)``).  Values equal to a threshold fall into
    the upper bin.
    """
    alpha = alpha or codec.cmp_bit
    lo, hi = minmax(sess, ring, data.T, alpha)
    h = thresholds(sess, ring, lo, hi, p, codec)
    e = geq(sess, ring, data[:, :, None], h[None, :, :], alpha)
    return one_hot_from_geq(sess, e), h
