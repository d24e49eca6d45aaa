"""Additive sharing over Z_{2^L} and Z_2, and the trusted initializer (TI).

The TI hands out correlated randomness in a fixed consumption order.  Both
parties request items in the same order because the protocols are
symmetric, so item ``i`` of party A and item ``i`` of party B always belong
together.  Two delivery modes exist:

* :class:`TrustedInitializer` generates items lazily in process and serves
  them to both parties (used by tests and ``bench``).
* :func:`write_randomness_files` / :class:`FileRandomness` store one file per
  party (``ti-gen`` writes them, ``train`` reads them).

Every request carries an item descriptor (kind plus shape parameters); one that does
not match the next stored item, or a request past the end, raises
:class:`RandomnessExhausted`.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import threading
from typing import Callable

import numpy as np

from .errors import RandomnessExhausted, RingMismatch
from .ring import Ring

MAGIC = b"STRAND01"
FILE_VERSION = 1


# ---- plain sharing ---------------------------------------------------------

def share(ring: Ring, x: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split ring elements into two additive shares."""
    r = ring.random(rng, x.shape)
    return r, ring.sub(x, r)


def share_bits(bits: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split a 0/1 uint8 array into two XOR shares."""
    bits = np.asarray(bits, dtype=np.uint8)
    r = random_bits(rng, bits.shape)
    return r, bits ^ r


def share_input(ring: Ring, x: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mask-based input sharing: keep ``mask`` locally, send ``x - mask`` to the peer."""
    return mask, ring.sub(x, mask)


def reveal(ring: Ring, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.dtype != b.dtype or a.dtype != ring.dtype:
        raise RingMismatch("shares belong to different rings")
    return ring.add(a, b)


def reveal_bits(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.dtype != np.uint8 or b.dtype != np.uint8:
        raise RingMismatch("Z_2 shares must be uint8 arrays")
    return a ^ b


def random_bits(rng: np.random.Generator, shape) -> np.ndarray:
    shape = (int(shape),) if isinstance(shape, (int, np.integer)) else tuple(shape)
    size = int(np.prod(shape, dtype=np.int64))
    raw = np.frombuffer(rng.bytes((size + 7) // 8), dtype=np.uint8)
    return np.unpackbits(raw, count=size, bitorder="little").reshape(shape)


def random_bytes(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.frombuffer(rng.bytes(n), dtype=np.uint8).copy()


# ---- item specs ------------------------------------------------------------

def _shape(s) -> list[int]:
    return [int(v) for v in s]


def spec_triple(ring: Ring, sx, sy) -> dict:
    return {"kind": "triple", "bits": ring.bits, "sx": _shape(sx), "sy": _shape(sy)}


def spec_matrix_triple(ring: Ring, sx, sy) -> dict:
    return {"kind": "matrix_triple", "bits": ring.bits, "sx": _shape(sx), "sy": _shape(sy)}


def spec_bit_triple(nbytes: int) -> dict:
    return {"kind": "bit_triple", "nbytes": int(nbytes)}


def spec_bit_matrix_triple(sx, sy) -> dict:
    return {"kind": "bit_matrix_triple", "sx": _shape(sx), "sy": _shape(sy)}


def spec_fs_rf(trees: int, f: int, p: int, k: int) -> dict:
    return {"kind": "fs_rf", "trees": trees, "f": f, "p": p, "k": k}


def spec_ss(trees: int, s: int, n: int) -> dict:
    return {"kind": "ss", "trees": trees, "s": s, "n": n}


def spec_fs_xt(ring: Ring, trees: int, f: int, k: int, replace: bool) -> dict:
    return {"kind": "fs_xt", "bits": ring.bits, "trees": trees, "f": f, "k": k, "replace": bool(replace)}


def spec_ratios(ring: Ring, trees: int, k: int, frac_bits: int) -> dict:
    return {"kind": "ratios", "bits": ring.bits, "trees": trees, "k": k, "frac_bits": frac_bits}


def _mm_shape(sx, sy) -> tuple[int, ...]:
    batch = np.broadcast_shapes(tuple(sx[:-2]), tuple(sy[:-2]))
    return (*batch, sx[-2], sy[-1])


def item_layout(spec: dict) -> list[tuple[str, tuple[int, ...]]]:
    """Arrays making up one party's share of an item: (encoding, shape) pairs.

    Encodings: ``"ring"`` for elements of the item's ring, ``"bits"`` for 0/1
    arrays, ``"bytes"`` for packed Z_2 data.
    """
    k = spec["kind"]
    if k == "triple":
        sx, sy = tuple(spec["sx"]), tuple(spec["sy"])
        return [("ring", sx), ("ring", sy), ("ring", np.broadcast_shapes(sx, sy))]
    if k == "matrix_triple":
        sx, sy = tuple(spec["sx"]), tuple(spec["sy"])
        return [("ring", sx), ("ring", sy), ("ring", _mm_shape(sx, sy))]
    if k == "bit_triple":
        n = spec["nbytes"]
        return [("bytes", (n,))] * 3
    if k == "bit_matrix_triple":
        sx, sy = tuple(spec["sx"]), tuple(spec["sy"])
        return [("bits", sx), ("bits", sy), ("bits", _mm_shape(sx, sy))]
    if k == "fs_rf":
        return [("bits", (spec["trees"], spec["f"] * spec["p"], spec["k"] * spec["p"]))]
    if k == "ss":
        return [("bits", (spec["trees"], spec["s"], spec["n"]))]
    if k == "fs_xt":
        return [("ring", (spec["trees"], spec["f"], spec["k"]))]
    if k == "ratios":
        return [("ring", (spec["trees"], spec["k"]))]
    raise ValueError(f"unknown randomness kind {k!r}")


# ---- generation ------------------------------------------------------------

def _gen_item(spec: dict, rng: np.random.Generator):
    """Return (shares of A, shares of B, plaintext or None)."""
    kind = spec["kind"]
    if kind in ("triple", "matrix_triple"):
        ring = Ring(spec["bits"])
        sx, sy = spec["sx"], spec["sy"]
        a, b = ring.random(rng, sx), ring.random(rng, sy)
        c = ring.mul(a, b) if kind == "triple" else ring.matmul(a, b)
        sa, sb = [], []
        for v in (a, b, c):
            r = ring.random(rng, v.shape)
            sa.append(r)
            sb.append(ring.sub(v, r))
        return sa, sb, None
    if kind == "bit_triple":
        n = spec["nbytes"]
        a, b = random_bytes(rng, n), random_bytes(rng, n)
        c = a & b
        ra = [random_bytes(rng, n) for _ in range(3)]
        return ra, [a ^ ra[0], b ^ ra[1], c ^ ra[2]], None
    if kind == "bit_matrix_triple":
        sx, sy = spec["sx"], spec["sy"]
        a, b = random_bits(rng, sx), random_bits(rng, sy)
        c = bit_matmul(a, b)
        ra = [random_bits(rng, v.shape) for v in (a, b, c)]
        return ra, [a ^ ra[0], b ^ ra[1], c ^ ra[2]], None
    if kind == "fs_rf":
        t, f, p, k = spec["trees"], spec["f"], spec["p"], spec["k"]
        if k > f:
            raise ValueError("random forest feature selection needs k <= f")
        feats = np.stack([np.sort(rng.choice(f, size=k, replace=False)) for _ in range(t)])
        fs = np.zeros((t, f * p, k * p), dtype=np.uint8)
        for ti in range(t):
            for col, j in enumerate(feats[ti]):
                fs[ti, j * p:(j + 1) * p, col * p:(col + 1) * p] = np.eye(p, dtype=np.uint8)
        r = random_bits(rng, fs.shape)
        return [r], [fs ^ r], {"features": feats}
    if kind == "ss":
        t, s, n = spec["trees"], spec["s"], spec["n"]
        idx = rng.integers(0, n, size=(t, s))
        ss = np.zeros((t, s, n), dtype=np.uint8)
        np.put_along_axis(ss, idx[..., None], 1, axis=2)
        r = random_bits(rng, ss.shape)
        return [r], [ss ^ r], {"instances": idx}
    if kind == "fs_xt":
        ring = Ring(spec["bits"])
        t, f, k = spec["trees"], spec["f"], spec["k"]
        if spec["replace"]:
            feats = rng.integers(0, f, size=(t, k))
        else:
            if k > f:
                raise ValueError("sampling without replacement needs k <= f")
            feats = np.stack([rng.permutation(f)[:k] for _ in range(t)])
        fs = np.zeros((t, f, k), dtype=np.int64)
        np.put_along_axis(fs, feats[:, None, :], 1, axis=1)
        fs = ring.from_ints(fs)
        r = ring.random(rng, fs.shape)
        return [r], [ring.sub(fs, r)], {"features": feats}
    if kind == "ratios":
        ring = Ring(spec["bits"])
        t, k, a = spec["trees"], spec["k"], spec["frac_bits"]
        vals = rng.integers(1, 1 << a, size=(t, k))
        plain = ring.from_ints(vals)
        r = ring.random(rng, plain.shape)
        return [r], [ring.sub(plain, r)], {"ratios": vals}
    raise ValueError(f"unknown randomness kind {kind!r}")


def bit_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over Z_2 of 0/1 uint8 arrays (exact below 2^53 terms)."""
    prod = np.matmul(a.astype(np.float64), b.astype(np.float64))
    return (prod.astype(np.int64) & 1).astype(np.uint8)


def seed_fingerprint(seed: int) -> str:
    return hashlib.sha256(f"ti-seed:{seed}".encode()).hexdigest()[:16]


class Randomness:
    """One party's stream of correlated randomness."""

    role: str

    def take(self, spec: dict) -> list[np.ndarray]:
        raise NotImplementedError

    # typed helpers used by the protocols
    def triple(self, ring, sx, sy):
        return self.take(spec_triple(ring, sx, sy))

    def matrix_triple(self, ring, sx, sy):
        return self.take(spec_matrix_triple(ring, sx, sy))

    def bit_triple(self, nbytes):
        return self.take(spec_bit_triple(nbytes))

    def bit_matrix_triple(self, sx, sy):
        return self.take(spec_bit_matrix_triple(sx, sy))

    def fs_rf(self, trees, f, p, k):
        return self.take(spec_fs_rf(trees, f, p, k))[0]

    def ss(self, trees, s, n):
        return self.take(spec_ss(trees, s, n))[0]

    def fs_xt(self, ring, trees, f, k, replace=True):
        return self.take(spec_fs_xt(ring, trees, f, k, replace))[0]

    def ratios(self, ring, trees, k, frac_bits):
        return self.take(spec_ratios(ring, trees, k, frac_bits))[0]


class NoRandomness(Randomness):
    """Stream for sessions that only open values; any request fails."""

    def __init__(self, role: str):
        self.role = role

    def take(self, spec):
        raise RandomnessExhausted(f"party {self.role} holds no randomness, {spec['kind']} requested")


class TrustedInitializer:
    """In-process TI that generates items on first request, in consumption order.

    Args:
        seed: Seed of the generator; identical seeds give identical items.
        keep_plain: Keep plaintext selection matrices and ratios in
            ``self.plain`` (a list of ``(spec, values)``) for test harnesses.
        sink: Optional callable receiving ``(spec, shares_a, shares_b)`` for
            every generated item, used to write randomness files.
    """

    def __init__(self, seed: int, keep_plain: bool = False,
                 sink: Callable[[dict, list, list], None] | None = None):
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self._items: list[dict] = []
        self._pending: dict[int, tuple[str, list]] = {}
        self._cursor = {"A": 0, "B": 0}
        self.keep_plain = keep_plain
        self.plain: list[tuple[dict, dict]] = []
        self._sink = sink

    def party(self, role: str) -> "DealerView":
        return DealerView(self, role)

    @property
    def items(self) -> list[dict]:
        return list(self._items)

    def _take(self, role: str, spec: dict) -> list[np.ndarray]:
        with self._lock:
            i = self._cursor[role]
            self._cursor[role] += 1
            if i < len(self._items):
                if self._items[i] != spec:
                    raise RandomnessExhausted(
                        f"party {role} requested {spec['kind']} at item {i}, peer consumed {self._items[i]['kind']}")
                owner, shares = self._pending.pop(i)
                if owner != role:
                    raise RandomnessExhausted(f"item {i} already consumed by party {role}")
                return shares
            sa, sb, plain = _gen_item(spec, self._rng)
            self._items.append(spec)
            if self.keep_plain and plain is not None:
                self.plain.append((spec, plain))
            if self._sink is not None:
                self._sink(spec, sa, sb)
            mine, theirs = (sa, sb) if role == "A" else (sb, sa)
            self._pending[i] = ("B" if role == "A" else "A", theirs)
            return mine


class DealerView(Randomness):
    def __init__(self, dealer: TrustedInitializer, role: str):
        self.dealer, self.role = dealer, role

    def take(self, spec):
        return self.dealer._take(self.role, spec)


# ---- files -----------------------------------------------------------------

def _encode_array(enc: str, arr: np.ndarray, ring: Ring | None) -> bytes:
    if enc == "ring":
        raw = ring.to_bytes(arr)
    elif enc == "bits":
        raw = np.packbits(arr.reshape(-1), bitorder="little").tobytes()
    else:
        raw = np.ascontiguousarray(arr, dtype=np.uint8).tobytes()
    return raw + b"\0" * (-len(raw) % 8)


def _array_nbytes(enc: str, shape, ring: Ring | None) -> int:
    size = int(np.prod(shape, dtype=np.int64))
    if enc == "ring":
        n = size * 8 * ring.limbs
    elif enc == "bits":
        n = (size + 7) // 8
    else:
        n = size
    return n + (-n % 8)


def _decode_array(enc: str, buf, shape, ring: Ring | None) -> np.ndarray:
    size = int(np.prod(shape, dtype=np.int64))
    if enc == "ring":
        return np.frombuffer(buf, dtype=ring.dtype, count=size).reshape(shape).copy()
    if enc == "bits":
        raw = np.frombuffer(buf, dtype=np.uint8, count=(size + 7) // 8)
        return np.unpackbits(raw, count=size, bitorder="little").reshape(shape)
    return np.frombuffer(buf, dtype=np.uint8, count=size).reshape(shape).copy()


def _ring_of(spec: dict) -> Ring | None:
    return Ring(spec["bits"]) if "bits" in spec else None


class RandomnessFileWriter:
    """Streams generated items into one file per party.

    Item data goes to temporary files first; :meth:`close` writes the final
    files as magic, version, JSON header and the data words.
    """

    def __init__(self, path_a: str, path_b: str, seed: int, plan_fingerprint: str, ring_bits: int):
        self.paths = {"A": path_a, "B": path_b}
        self.header = {"seed_fingerprint": seed_fingerprint(seed), "plan_fingerprint": plan_fingerprint,
                       "ring_bits": ring_bits, "items": []}
        self._tmp = {r: tempfile.TemporaryFile() for r in "AB"}

    def __call__(self, spec, sa, sb):
        self.header["items"].append(spec)
        ring = _ring_of(spec)
        for role, shares in (("A", sa), ("B", sb)):
            for (enc, _), arr in zip(item_layout(spec), shares):
                self._tmp[role].write(_encode_array(enc, arr, ring))

    def close(self):
        for role in "AB":
            head = dict(self.header, party=role)
            blob = json.dumps(head, sort_keys=True).encode()
            with open(self.paths[role], "wb") as out:
                out.write(MAGIC + struct.pack("<II", FILE_VERSION, len(blob)) + blob)
                out.write(b"\0" * (-(len(MAGIC) + 8 + len(blob)) % 8))
                tmp = self._tmp[role]
                tmp.seek(0)
                while chunk := tmp.read(1 << 24):
                    out.write(chunk)
                tmp.close()


def write_randomness_files(specs: list[dict], seed: int, path_a: str, path_b: str,
                           plan_fingerprint: str = "", ring_bits: int = 64) -> None:
    """Generate the listed items with a seeded TI and store one file per party."""
    writer = RandomnessFileWriter(path_a, path_b, seed, plan_fingerprint, ring_bits)
    ti = TrustedInitializer(seed, sink=writer)
    a = ti.party("A")
    b = ti.party("B")
    for spec in specs:
        a.take(spec)
        b.take(spec)
    writer.close()


def read_header(path: str) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise RandomnessExhausted(f"{path} is not a randomness file")
        version, n = struct.unpack("<II", fh.read(8))
        if version != FILE_VERSION:
            raise RandomnessExhausted(f"unsupported randomness file version {version}")
        return json.loads(fh.read(n))


class FileRandomness(Randomness):
    """Reads one party's randomness file through a memory map."""

    def __init__(self, path: str):
        self.path = path
        self.header = read_header(path)
        self.role = self.header["party"]
        with open(path, "rb") as fh:
            fh.seek(len(MAGIC))
            _, n = struct.unpack("<II", fh.read(8))
        start = len(MAGIC) + 8 + n
        start += -start % 8
        self._data = np.memmap(path, dtype=np.uint8, mode="r") if os.path.getsize(path) > start else np.zeros(0, np.uint8)
        self._pos = start
        self._cursor = 0

    @property
    def remaining(self) -> int:
        return len(self.header["items"]) - self._cursor

    def take(self, spec):
        items = self.header["items"]
        if self._cursor >= len(items):
            raise RandomnessExhausted(f"randomness file {self.path} is exhausted")
        stored = items[self._cursor]
        if stored != spec:
            raise RandomnessExhausted(
                f"item {self._cursor} is {stored['kind']} {stored}, protocol requested {spec}")
        self._cursor += 1
        ring = _ring_of(spec)
        out = []
        for enc, shape in item_layout(spec):
            n = _array_nbytes(enc, shape, ring)
            out.append(_decode_array(enc, self._data[self._pos:self._pos + n], shape, ring))
            self._pos += n
        return out
