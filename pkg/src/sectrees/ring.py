"""Arithmetic in Z_{2^L}, two's complement fixed point and local truncation.

Rings up to 64 bits store one ``uint64`` per element and mask after every
operation.  Wider rings (multiples of 64) use a structured dtype with one
``uint64`` limb per field, least significant limb first, so indexing,
reshaping and concatenation behave exactly like ordinary numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeError, RingMismatch

M16 = np.uint64(0xFFFF)
M32 = np.uint64(0xFFFFFFFF)
_U = np.uint64


def _broadcast_shape(*arrays) -> tuple[int, ...]:
    return np.broadcast_shapes(*(a.shape for a in arrays))


class Ring:
    """The ring Z_{2^bits}.

    Args:
        bits: Width in bits. Any value in 1..64, or a multiple of 64 above.
    """

    def __init__(self, bits: int):
        if bits < 1 or (bits > 64 and bits % 64):
            raise ValueError(f"unsupported ring width {bits}")
        self.bits = bits
        self.limbs = (bits + 63) // 64
        self.narrow = bits <= 64
        self.modulus = 1 << bits
        if self.narrow:
            self.dtype = np.dtype("<u8")
            self._mask = None if bits == 64 else _U((1 << bits) - 1)
        else:
            self.dtype = np.dtype([(f"l{i}", "<u8") for i in range(self.limbs)])
            self._mask = None

    def __repr__(self) -> str:
        return f"Ring({self.bits})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Ring) and other.bits == self.bits

    def __hash__(self) -> int:
        return hash(("Ring", self.bits))

    # ---- limb plumbing -------------------------------------------------
    def _m(self, x: np.ndarray) -> np.ndarray:
        return x if self._mask is None else x & self._mask

    def _split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[f"l{i}"] for i in range(self.limbs)]

    def _join(self, limbs: list[np.ndarray]) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(l) for l in limbs))
        out = np.empty(shape, dtype=self.dtype)
        for i, limb in enumerate(limbs):
            out[f"l{i}"] = limb
        return out

    def check(self, *arrays: np.ndarray) -> None:
        for a in arrays:
            if a.dtype != self.dtype:
                raise RingMismatch(f"expected {self!r} array, got dtype {a.dtype}")

    # ---- construction ----------------------------------------------------
    def zeros(self, shape=()) -> np.ndarray:
        return np.zeros(shape, dtype=self.dtype)

    def full(self, value: int, shape=()) -> np.ndarray:
        return self.from_ints(np.full(shape, int(value) % self.modulus, dtype=object))

    def from_ints(self, values) -> np.ndarray:
        """Reduce integers (any sign, Python or numpy) into the ring."""
        arr = np.asarray(values)
        if arr.dtype.kind == "f":
            raise TypeError("ring elements must be integers")
        if self.narrow and arr.dtype.kind in "iub":
            return self._m(arr.astype(np.int64 if arr.dtype.kind != "u" else np.uint64).astype(_U))
        obj = np.asarray(arr, dtype=object) % self.modulus
        if self.narrow:
            return obj.astype(_U)
        mask = (1 << 64) - 1
        return self._join([((obj >> (64 * i)) & mask).astype(_U) for i in range(self.limbs)])

    def to_ints(self, x: np.ndarray) -> np.ndarray:
        """Unsigned representatives as an object array of Python ints."""
        if self.narrow:
            return x.astype(object)
        out = np.zeros(x.shape, dtype=object)
        for i, limb in enumerate(self._split(x)):
            out = out + (limb.astype(object) << (64 * i))
        return out

    def to_signed(self, x: np.ndarray) -> np.ndarray:
        """Two's complement interpretation; int64 for narrow rings."""
        if self.bits == 64:
            return x.view(np.int64)
        if self.narrow:
            v = x.astype(np.int64)
            return np.where(v >= (1 << (self.bits - 1)), v - (1 << self.bits), v)
        u = self.to_ints(x)
        half = 1 << (self.bits - 1)
        return np.where(u >= half, u - self.modulus, u)

    def random(self, rng: np.random.Generator, shape=()) -> np.ndarray:
        shape = (int(shape),) if isinstance(shape, (int, np.integer)) else tuple(shape)
        size = int(np.prod(shape, dtype=np.int64))
        raw = rng.bit_generator.random_raw(size * self.limbs).astype(_U)
        if self.narrow:
            return self._m(raw).reshape(shape)
        return raw.view(self.dtype).reshape(shape)

    # ---- arithmetic --------------------------------------------------
    def add(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.narrow:
            return self._m(np.add(x, y))
        out, carry = [], _U(0)
        for xi, yi in zip(self._split(x), self._split(y)):
            s = xi + yi
            c1 = (s < xi).astype(_U)
            s2 = s + carry
            c2 = (s2 < s).astype(_U)
            out.append(s2)
            carry = c1 | c2
        return self._join(out)

    def sub(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.narrow:
            return self._m(np.subtract(x, y))
        out, borrow = [], _U(0)
        for xi, yi in zip(self._split(x), self._split(y)):
            d = xi - yi
            b1 = (xi < yi).astype(_U)
            d2 = d - borrow
            b2 = (d < borrow).astype(_U)
            out.append(d2)
            borrow = b1 | b2
        return self._join(out)

    def neg(self, x: np.ndarray) -> np.ndarray:
        return self.sub(self.zeros(x.shape), x)

    def mul(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.narrow:
            return self._m(np.multiply(x, y))
        n = 2 * self.limbs
        xd, yd = self._digits32(x), self._digits32(y)
        shape = _broadcast_shape(x, y)
        acc = [np.zeros(shape, dtype=_U) for _ in range(n)]
        for i in range(n):
            for j in range(n - i):
                p = xd[i] * yd[j]
                acc[i + j] += p & M32
                if i + j + 1 < n:
                    acc[i + j + 1] += p >> _U(32)
        return self._from_digits(acc, 32)

    def matmul(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.narrow:
            return self._m(np.matmul(x, y))
        # 16-bit digits through float64 BLAS: each digit product sum stays below 2^53.
        k = x.shape[-1]
        if k >= 1 << 21:
            raise ValueError("inner dimension too large for exact float accumulation")
        n = 4 * self.limbs
        xd = [d.astype(np.float64) for d in self._digits16(x)]
        yd = [d.astype(np.float64) for d in self._digits16(y)]
        cols = y.shape[-1]
        ycat = np.concatenate(yd, axis=-1)
        acc: list = [None] * n
        for i in range(n):
            prod = np.matmul(xd[i], ycat[..., : (n - i) * cols])
            for j in range(n - i):
                part = prod[..., j * cols:(j + 1) * cols].astype(_U)
                acc[i + j] = part if acc[i + j] is None else acc[i + j] + part
        return self._from_digits(acc, 16)

    def sum(self, x: np.ndarray, axis=None) -> np.ndarray:
        if self.narrow:
            return self._m(np.sum(x, axis=axis, dtype=_U))
        digits = [np.sum(d, axis=axis, dtype=_U) for d in self._digits32(x)]
        return self._from_digits(digits, 32)

    def shr(self, x: np.ndarray, k: int) -> np.ndarray:
        """Logical right shift of the unsigned representative."""
        if k == 0:
            return x.copy()
        if self.narrow:
            return x >> _U(k) if k < 64 else np.zeros_like(x)
        limbs = self._split(x)
        q, r = divmod(k, 64)
        out = []
        for i in range(self.limbs):
            lo = limbs[i + q] if i + q < self.limbs else np.zeros_like(limbs[0])
            if r == 0:
                out.append(lo.copy())
                continue
            hi = limbs[i + q + 1] if i + q + 1 < self.limbs else np.zeros_like(limbs[0])
            out.append((lo >> _U(r)) | (hi << _U(64 - r)))
        return self._join(out)

    def bit(self, x: np.ndarray, j: int) -> np.ndarray:
        """Bit j (0-based, LSB first) as uint8."""
        limb = x if self.narrow else x[f"l{j // 64}"]
        return ((limb >> _U(j % 64)) & _U(1)).astype(np.uint8)

    def bit_rows(self, x: np.ndarray, count: int) -> np.ndarray:
        """Lowest ``count`` bits of every element, packed 8 elements per byte.

        Returns an array of shape ``(count, ceil(x.size / 8))``; row j holds bit j.
        """
        flat = x.reshape(-1)
        return np.stack([np.packbits(self.bit(flat, j), bitorder="little") for j in range(count)]) \
            if count else np.zeros((0, (flat.size + 7) // 8), dtype=np.uint8)

    # ---- serialization -------------------------------------------------
    def to_bytes(self, x: np.ndarray) -> bytes:
        return np.ascontiguousarray(x, dtype=self.dtype).tobytes()

    def from_bytes(self, buf: bytes, shape) -> np.ndarray:
        return np.frombuffer(buf, dtype=self.dtype).reshape(shape).copy()

    # ---- digit helpers -------------------------------------------------
    def _digits32(self, x: np.ndarray) -> list[np.ndarray]:
        out = []
        for limb in self._split(x):
            out += [limb & M32, limb >> _U(32)]
        return out

    def _digits16(self, x: np.ndarray) -> list[np.ndarray]:
        out = []
        for limb in self._split(x):
            out += [(limb >> _U(s)) & M16 for s in (0, 16, 32, 48)]
        return out

    def _from_digits(self, acc: list[np.ndarray], width: int) -> np.ndarray:
        mask = _U((1 << width) - 1)
        carry = _U(0)
        digits = []
        for a in acc:
            a = a + carry
            digits.append(a & mask)
            carry = a >> _U(width)
        per = 64 // width
        limbs = []
        for i in range(self.limbs):
            limb = digits[i * per].copy()
            for t in range(1, per):
                limb |= digits[i * per + t] << _U(t * width)
            limbs.append(limb)
        return self._join(limbs)


Z64 = Ring(64)


@dataclass(frozen=True)
class FixedPointCodec:
    """Two's complement fixed point with ``frac_bits`` fractional bits.

    Magnitudes are floored before negation, so encoding rounds toward zero.
    """

    total_bits: int = 64
    frac_bits: int = 10
    int_bits: int = 22

    def __post_init__(self):
        if self.frac_bits < 1 or self.int_bits < 1:
            raise ValueError("frac_bits and int_bits must be at least 1")
        if self.total_bits < 2 * (self.frac_bits + self.int_bits):
            raise ValueError("total_bits must be at least 2 * (frac_bits + int_bits)")
        if self.frac_bits + self.int_bits > 52:
            raise ValueError("frac_bits + int_bits above 52 cannot be encoded exactly from floats")

    @classmethod
    def parse(cls, text: str) -> "FixedPointCodec":
        """Parse ``"64:10:22"`` style strings."""
        try:
            lam, a, b = (int(t) for t in text.split(":"))
        except ValueError as exc:
            raise ValueError(f"codec must look like 64:10:22, got {text!r}") from exc
        return cls(lam, a, b)

    def __str__(self) -> str:
        return f"{self.total_bits}:{self.frac_bits}:{self.int_bits}"

    @property
    def ring(self) -> Ring:
        return Ring(self.total_bits)

    @property
    def cmp_bit(self) -> int:
        """Bit position (1-based) that carries the sign inside the encoded subring."""
        return self.frac_bits + self.int_bits + 1

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise RangeError("cannot encode non-finite values")
        if np.any(np.abs(x) >= 2.0 ** self.int_bits):
            raise RangeError(f"magnitude must stay below 2^{self.int_bits}")
        mag = np.floor(np.abs(x) * 2.0 ** self.frac_bits).astype(np.int64)
        return self.ring.from_ints(np.where(x < 0, -mag, mag))

    def decode(self, v: np.ndarray) -> np.ndarray:
        signed = self.ring.to_signed(np.asarray(v, dtype=self.ring.dtype))
        return np.asarray(signed, dtype=np.float64) / 2.0 ** self.frac_bits


def truncate(ring: Ring, share: np.ndarray, frac_bits: int, role: str) -> np.ndarray:
    """Local truncation of one party's share by ``frac_bits`` bits.

    Party A shifts its share; party B shifts the negation of its share and
    negates back.  The reconstructed result is off by at most one unit in
    the last place unless the shares straddle the wrap-around point.
    """
    if role == "A":
        return ring.shr(share, frac_bits)
    return ring.neg(ring.shr(ring.neg(share), frac_bits))
