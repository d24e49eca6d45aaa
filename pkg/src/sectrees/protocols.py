"""Core two-party primitives over shares.

Every function runs on one party.  Both parties call the same functions in
the same order with arrays of the same shapes; each call that needs the
peer performs exactly the rounds documented on it.

Z_2 shares are uint8 arrays holding 0/1.  Inside bit extraction the bits
of many elements are packed 8 per byte along the element axis, so one
Beaver AND works on whole bytes.
"""

from __future__ import annotations

import math

import numpy as np

from .ring import Ring
from .sharing import Randomness, bit_matmul as _plain_bit_matmul
from .transport import Channel


class Session:
    """A party's view of one protocol run: channel plus randomness stream."""

    def __init__(self, channel: Channel, rand: Randomness):
        if channel.role != rand.role:
            raise ValueError("channel and randomness belong to different parties")
        self.chan = channel
        self.rand = rand
        self.role = channel.role
        self.is_a = self.role == "A"

    # ---- openings ------------------------------------------------------
    def open_ring(self, ring: Ring, arrays: list[np.ndarray]) -> list[np.ndarray]:
        """Reconstruct ring shares with the peer (one round)."""
        payloads = [ring.to_bytes(a) for a in arrays]
        bits = ring.bits * sum(a.size for a in arrays)
        theirs = self.chan.exchange(payloads, bits)
        return [ring.add(a, ring.from_bytes(t, a.shape)) for a, t in zip(arrays, theirs)]

    def open_packed(self, arrays: list[np.ndarray], nbits: int) -> list[np.ndarray]:
        """Reconstruct packed Z_2 shares; ``nbits`` is the logical bit count."""
        theirs = self.chan.exchange([a.tobytes() for a in arrays], nbits)
        return [a ^ np.frombuffer(t, dtype=np.uint8).reshape(a.shape) for a, t in zip(arrays, theirs)]

    def reveal(self, ring: Ring, x: np.ndarray) -> np.ndarray:
        return self.open_ring(ring, [x])[0]

    def reveal_bits(self, b: np.ndarray) -> np.ndarray:
        flat = b.reshape(-1)
        (packed,) = self.open_packed([np.packbits(flat, bitorder="little")], flat.size)
        return np.unpackbits(packed, count=flat.size, bitorder="little").reshape(b.shape)

    # ---- public constants as shares ---------------------------------------
    def public(self, ring: Ring, values) -> np.ndarray:
        """Share of a public ring value: A holds it, B holds zero."""
        v = ring.from_ints(values)
        return v if self.is_a else ring.zeros(v.shape)

    def public_bits(self, bits) -> np.ndarray:
        b = np.asarray(bits, dtype=np.uint8)
        return b.copy() if self.is_a else np.zeros_like(b)

    def lift(self, ring: Ring, x: np.ndarray) -> np.ndarray:
        """Add a public ring array to nothing: A's share is ``x``."""
        return x.copy() if self.is_a else ring.zeros(x.shape)


# ---- multiplication -------------------------------------------------------

def mul(sess: Session, ring: Ring, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise product with numpy broadcasting (one round)."""
    a, b, c = sess.rand.triple(ring, x.shape, y.shape)
    d, e = sess.open_ring(ring, [ring.sub(x, a), ring.sub(y, b)])
    z = ring.add(c, ring.add(ring.mul(d, b), ring.mul(e, a)))
    return ring.add(z, ring.mul(d, e)) if sess.is_a else z


def matmul(sess: Session, ring: Ring, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Matrix product (batched over leading axes) with one round."""
    a, b, c = sess.rand.matrix_triple(ring, x.shape, y.shape)
    d, e = sess.open_ring(ring, [ring.sub(x, a), ring.sub(y, b)])
    z = ring.add(c, ring.add(ring.matmul(d, b), ring.matmul(a, e)))
    return ring.add(z, ring.matmul(d, e)) if sess.is_a else z


def and_packed(sess: Session, x: np.ndarray, y: np.ndarray, nbits: int) -> np.ndarray:
    """AND of packed Z_2 shares of equal shape (one round)."""
    a, b, c = sess.rand.bit_triple(x.size)
    a, b, c = a.reshape(x.shape), b.reshape(x.shape), c.reshape(x.shape)
    d, e = sess.open_packed([x ^ a, y ^ b], 2 * nbits)
    z = c ^ (d & b) ^ (e & a)
    return z ^ (d & e) if sess.is_a else z


def and_bits(sess: Session, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """AND of unpacked Z_2 shares with broadcasting (one round)."""
    x, y = np.broadcast_arrays(x, y)
    shape, n = x.shape, x.size
    px = np.packbits(x.reshape(-1), bitorder="little")
    py = np.packbits(y.reshape(-1), bitorder="little")
    z = and_packed(sess, px, py, n)
    return np.unpackbits(z, count=n, bitorder="little").reshape(shape)


def or_bits(sess: Session, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x ^ y ^ and_bits(sess, x, y)


def not_bits(sess: Session, x: np.ndarray) -> np.ndarray:
    return x ^ np.uint8(1) if sess.is_a else x.copy()


def bit_matmul(sess: Session, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Matrix product over Z_2 (one round)."""
    a, b, c = sess.rand.bit_matrix_triple(x.shape, y.shape)
    nbits = x.size + y.size
    px, py = np.packbits((x ^ a).reshape(-1), bitorder="little"), np.packbits((y ^ b).reshape(-1), bitorder="little")
    pd, pe = sess.open_packed([px, py], nbits)
    d = np.unpackbits(pd, count=x.size, bitorder="little").reshape(x.shape)
    e = np.unpackbits(pe, count=y.size, bitorder="little").reshape(y.shape)
    z = c ^ _plain_bit_matmul(d, b) ^ _plain_bit_matmul(a, e)
    return z ^ _plain_bit_matmul(d, e) if sess.is_a else z


def bit_to_ring(sess: Session, ring: Ring, b: np.ndarray) -> np.ndarray:
    """Convert Z_2 shares of bits into Z_q shares of the same 0/1 values (one round).

    With u and v the two parties' bits, the value is u + v - 2uv.
    """
    own = ring.from_ints(b)
    zero = ring.zeros(b.shape)
    u, v = (own, zero) if sess.is_a else (zero, own)
    z = mul(sess, ring, u, v)
    return ring.sub(own, ring.add(z, z))


def select(sess: Session, ring: Ring, c: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``x`` where c = 1 and ``y`` where c = 0, for Z_q shares of c (one round)."""
    return ring.add(y, mul(sess, ring, c, ring.sub(x, y)))


# ---- bit extraction -------------------------------------------------------

def _generate_bits(sess: Session, rows: np.ndarray, n: int) -> np.ndarray:
    """g_j = a_j AND b_j where a_j is A's bit and b_j is B's bit (one round)."""
    zero = np.zeros_like(rows)
    u, v = (rows, zero) if sess.is_a else (zero, rows)
    return and_packed(sess, u, v, rows.shape[0] * n)


def _compose_btx(sess: Session, p: np.ndarray, g: np.ndarray, n: int) -> np.ndarray:
    """Carry out of positions 1..L via pairwise compositions.

    Node 0 always contains position 1, so for any block holding it only the
    generate bit is needed.  An odd node at the top passes through.
    """
    p, g = p.copy(), g.copy()
    while g.shape[0] > 1:
        count = g.shape[0]
        pairs = count // 2
        lo = np.arange(0, 2 * pairs, 2)
        hi = lo + 1
        x = np.concatenate([p[hi], p[hi[1:]]])
        y = np.concatenate([g[lo], p[lo[1:]]])
        z = and_packed(sess, x, y, x.shape[0] * n)
        ng = g[hi] ^ z[:pairs]
        np_ = np.concatenate([np.zeros_like(p[:1]), z[pairs:]])
        if count % 2:
            ng = np.concatenate([ng, g[-1:]])
            np_ = np.concatenate([np_, p[-1:]])
        p, g = np_, ng
    return g[0]


def _unpack_rows(row: np.ndarray, n: int, shape) -> np.ndarray:
    return np.unpackbits(row, count=n, bitorder="little").reshape(shape)


def extract_bit(sess: Session, ring: Ring, x: np.ndarray, alpha: int) -> np.ndarray:
    """Z_2 share of bit ``alpha`` (1-based) of each shared element.

    Rounds: 0 for alpha = 1, otherwise ceil(log2(alpha - 1)) + 1.
    """
    if not 1 <= alpha <= ring.bits:
        raise ValueError(f"alpha must lie in 1..{ring.bits}")
    n = x.size
    rows = ring.bit_rows(x, alpha)
    if alpha == 1:
        return _unpack_rows(rows[0], n, x.shape)
    g = _generate_bits(sess, rows[:alpha - 1], n)
    carry = _compose_btx(sess, rows[:alpha - 1], g, n)
    return _unpack_rows(rows[alpha - 1] ^ carry, n, x.shape)


def decompose_bits(sess: Session, ring: Ring, x: np.ndarray) -> np.ndarray:
    """Z_2 shares of every bit; output shape ``x.shape + (ring.bits,)``, LSB first.

    A Sklansky prefix network over positions 1..L-1 yields all carries in
    ceil(log2(L - 1)) rounds after the generate round.
    """
    n, width = x.size, ring.bits
    rows = ring.bit_rows(x, width)
    if width == 1:
        return _unpack_rows(rows[0], n, x.shape)[..., None]
    span = width - 1
    p = rows[:span].copy()
    g = _generate_bits(sess, p, n)
    for t in range(math.ceil(math.log2(span)) if span > 1 else 0):
        half, block = 1 << t, 1 << (t + 1)
        j = np.array([i for i in range(span) if i % block >= half], dtype=np.int64)
        src = (j // block) * block + half - 1
        full = j >= block  # blocks not starting at position 1 still need their propagate bit
        jf, sf = j[full], src[full]
        xs = np.concatenate([p[j], p[jf]])
        ys = np.concatenate([g[src], p[sf]])
        z = and_packed(sess, xs, ys, xs.shape[0] * n)
        g[j] ^= z[:j.size]
        p[jf] = z[j.size:]
    carries = np.concatenate([np.zeros_like(rows[:1]), g])
    bits = rows ^ carries
    out = np.unpackbits(bits, count=n, axis=1, bitorder="little")
    return out.T.reshape(*x.shape, width)


# ---- comparisons ------------------------------------------------------------

def geq(sess: Session, ring: Ring, x: np.ndarray, y: np.ndarray, alpha: int) -> np.ndarray:
    """Z_2 share of [x >= y], valid while bit ``alpha`` of x - y is its sign."""
    x, y = np.broadcast_arrays(x, y)
    return not_bits(sess, extract_bit(sess, ring, ring.sub(x, y), alpha))


def eq(sess: Session, ring: Ring, x: np.ndarray, y: np.ndarray, alpha: int) -> np.ndarray:
    """Z_2 share of [x == y]; both sign extractions share one batch."""
    x, y = np.broadcast_arrays(x, y)
    both = np.stack([ring.sub(x, y), ring.sub(y, x)])
    m = extract_bit(sess, ring, both, alpha)
    return not_bits(sess, m[0] ^ m[1])
