"""Data-owner tooling: CSV reading, scaling, encoding, share files and folds."""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelFormatError, RangeError
from .ring import FixedPointCodec, Ring
from .sharing import seed_fingerprint, share, share_bits

SHARE_MAGIC = b"STSHARE1"
SHARE_VERSION = 1
DATA_ENV = "SECTREES_DATA"


class DatasetUnavailable(FileNotFoundError):
    """A named benchmark dataset is not present on this machine."""


@dataclass
class PlainData:
    x: np.ndarray                 # (n, f) float64
    y: np.ndarray                 # (n,) class indices
    classes: list[str]
    names: list[str] = field(default_factory=list)
    kept: list[int] | None = None  # original column indices after sparse-feature removal

    @property
    def shape(self):
        return self.x.shape


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_csv(path: str) -> PlainData:
    """Numeric feature columns followed by one label column; an optional header row."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path} holds no rows")
    names: list[str] = []
    if not all(_is_number(c) for c in rows[0][:-1]):
        names, rows = [c.strip() for c in rows[0][:-1]], rows[1:]
    width = len(rows[0])
    feats, labels = [], []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"row {i + 1} has {len(row)} cells, expected {width}")
        try:
            feats.append([float(c) for c in row[:-1]])
        except ValueError:
            bad = next(j for j, c in enumerate(row[:-1]) if not _is_number(c))
            raise ValueError(f"non-numeric cell {row[bad]!r} at row {i + 1}, column {bad + 1}") from None
        labels.append(row[-1].strip())
    return _finish(np.array(feats, dtype=np.float64), labels, names)


def _finish(x: np.ndarray, labels: list[str], names: list[str]) -> PlainData:
    uniq = sorted(set(labels), key=lambda s: (not _is_number(s), float(s) if _is_number(s) else 0.0, s))
    index = {c: i for i, c in enumerate(uniq)}
    y = np.array([index[c] for c in labels], dtype=np.int64)
    return PlainData(x, y, uniq, names or [f"x{j}" for j in range(x.shape[1])])


def drop_sparse(data: PlainData, frac: float) -> PlainData:
    """Remove features whose share of exact zeros is at least ``frac``."""
    zero_share = np.mean(data.x == 0, axis=0)
    keep = [j for j in range(data.x.shape[1]) if zero_share[j] < frac]
    prev = data.kept or list(range(data.x.shape[1]))
    return PlainData(data.x[:, keep], data.y, data.classes, [data.names[j] for j in keep], [prev[j] for j in keep])


def encode_checked(x: np.ndarray, codec: FixedPointCodec, scale: float) -> np.ndarray:
    """Encode ``scale * x`` and check that column ranges suit sign-bit comparisons."""
    scaled = np.asarray(x, dtype=np.float64) * scale
    enc = codec.encode(scaled)
    ints = np.asarray(codec.ring.to_signed(enc), dtype=np.int64)
    if ints.size:
        width = ints.max(axis=0) - ints.min(axis=0)
        if np.any(width >= 1 << (codec.frac_bits + codec.int_bits)):
            raise RangeError(f"after scaling by {scale}, a column spans 2^{codec.int_bits} or more")
    return enc


@dataclass
class ShareFile:
    header: dict
    features: np.ndarray          # (n, f) ring shares
    labels: np.ndarray            # (n, c) Z_2 shares

    @property
    def codec(self) -> FixedPointCodec:
        h = self.header
        return FixedPointCodec(h["ring_bits"], h["frac_bits"], h["int_bits"])

    def rows(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.features[idx], self.labels[idx]

    def fold_split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(train, test) row indices of one stored fold."""
        assign = self.header.get("folds")
        if assign is None:
            raise ValueError("share file carries no fold assignment")
        assign = np.asarray(assign)
        if not 0 <= fold < assign.max() + 1:
            raise ValueError(f"fold {fold} out of range")
        return np.flatnonzero(assign != fold), np.flatnonzero(assign == fold)

    def write(self, path: str) -> None:
        blob = json.dumps(self.header, sort_keys=True).encode()
        head = SHARE_MAGIC + struct.pack("<II", SHARE_VERSION, len(blob)) + blob
        head += b"\0" * (-len(head) % 8)
        ring = Ring(self.header["ring_bits"])
        with open(path, "wb") as fh:
            fh.write(head)
            fh.write(ring.to_bytes(self.features))
            fh.write(self.labels.astype("<u8").tobytes())

    @classmethod
    def read(cls, path: str) -> "ShareFile":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:len(SHARE_MAGIC)] != SHARE_MAGIC:
            raise ModelFormatError(f"{path} is not a share file")
        version, n = struct.unpack_from("<II", raw, len(SHARE_MAGIC))
        if version != SHARE_VERSION:
            raise ModelFormatError(f"unsupported share file version {version}")
        start = len(SHARE_MAGIC) + 8
        header = json.loads(raw[start:start + n])
        pos = start + n
        pos += -pos % 8
        ring = Ring(header["ring_bits"])
        rows, f, c = header["n"], header["f"], header["c"]
        width = rows * f * 8 * ring.limbs
        feats = ring.from_bytes(raw[pos:pos + width], (rows, f))
        labels = np.frombuffer(raw[pos + width:pos + width + rows * c * 8], dtype="<u8").reshape(rows, c)
        return cls(header, feats, labels.astype(np.uint8))


def kfold(n: int, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled near-equal folds as (train, test) index pairs."""
    if k < 2 or n < k:
        raise ValueError(f"cannot build {k} folds from {n} instances")
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, k)
    return [(np.sort(np.concatenate([parts[j] for j in range(k) if j != i])), np.sort(parts[i]))
            for i in range(k)]


def fold_assignment(n: int, k: int, seed: int) -> list[int]:
    assign = np.zeros(n, dtype=np.int64)
    for i, (_, test) in enumerate(kfold(n, k, seed)):
        assign[test] = i
    return assign.tolist()


def share_dataset(data: PlainData, codec: FixedPointCodec, scale: float, seed: int,
                  folds: int | None = None) -> tuple[ShareFile, ShareFile]:
    """Encode ``scale * x``, split features and one-hot labels into two share files."""
    rng = np.random.default_rng(seed)
    enc = encode_checked(data.x, codec, scale)
    fa, fb = share(codec.ring, enc, rng)
    onehot = np.eye(len(data.classes), dtype=np.uint8)[data.y]
    la, lb = share_bits(onehot, rng)
    n, f = data.x.shape
    header = {"ring_bits": codec.total_bits, "frac_bits": codec.frac_bits, "int_bits": codec.int_bits,
              "n": n, "f": f, "c": len(data.classes), "scale": scale, "classes": data.classes,
              "names": data.names, "kept": data.kept, "seed_fingerprint": seed_fingerprint(seed),
              "folds": fold_assignment(n, folds, seed) if folds else None}
    return (ShareFile(dict(header, party="A"), fa, la), ShareFile(dict(header, party="B"), fb, lb))


def split_csv(path: str, codec: FixedPointCodec = FixedPointCodec(), seed: int = 0, scale: float = 1000.0,
              drop_sparse_frac: float | None = None, folds: int | None = None) -> tuple[ShareFile, ShareFile]:
    data = read_csv(path)
    if drop_sparse_frac is not None:
        data = drop_sparse(data, drop_sparse_frac)
    return share_dataset(data, codec, scale, seed, folds)


def reconstruct(a: ShareFile, b: ShareFile) -> tuple[np.ndarray, np.ndarray]:
    """Plain encoded features and one-hot labels from both files."""
    ring = Ring(a.header["ring_bits"])
    return ring.add(a.features, b.features), a.labels ^ b.labels


# ---- benchmark datasets ------------------------------------------------------

def data_dir() -> str:
    return os.environ.get(DATA_ENV, os.path.join(os.getcwd(), "data"))


def load_named(name: str, subsample: int | None = None, seed: int = 0) -> tuple[PlainData, float]:
    """A benchmark dataset and its default scale.

    ``bc`` ships with scikit-learn.  ``back`` and ``ecg`` are read from the
    data directory (``$SECTREES_DATA`` or ``./data``): ``back.csv`` or the
    ``Dataset_spine.csv`` export for the spine set, and ``ecg.csv`` or the
    ``ptbdb_normal.csv`` / ``ptbdb_abnormal.csv`` pair for the ECG set.
    """
    name = name.lower()
    if name == "bc":
        from sklearn.datasets import load_breast_cancer

        raw = load_breast_cancer()
        data = PlainData(raw.data.astype(np.float64), raw.target.astype(np.int64),
                         [str(c) for c in raw.target_names], list(raw.feature_names))
        # the largest feature times 1000 overflows 22 integer bits
        scale = 500.0
    elif name == "back":
        data, scale = _load_back(), 1000.0
    elif name == "ecg":
        data, scale = drop_sparse(_load_ecg(), 0.8), 1000.0
    elif os.path.exists(name):
        data, scale = read_csv(name), 1000.0
    else:
        raise DatasetUnavailable(f"unknown dataset {name!r}")
    if subsample and subsample < len(data.y):
        idx = np.sort(np.random.default_rng(seed).choice(len(data.y), subsample, replace=False))
        data = PlainData(data.x[idx], data.y[idx], data.classes, data.names, data.kept)
    return data, scale


def _missing(what: str) -> DatasetUnavailable:
    return DatasetUnavailable(f"{what} not found in {data_dir()} (set ${DATA_ENV} to its directory)")


def _load_back() -> PlainData:
    d = data_dir()
    plain = os.path.join(d, "back.csv")
    if os.path.exists(plain):
        return read_csv(plain)
    spine = os.path.join(d, "Dataset_spine.csv")
    if not os.path.exists(spine):
        raise _missing("back.csv or Dataset_spine.csv")
    with open(spine, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], [r for r in rows[1:] if r and r[0].strip()]
    label_col = head.index("Class_att") if "Class_att" in head else 12
    x = np.array([[float(v) for v in r[:label_col]] for r in body], dtype=np.float64)
    return _finish(x, [r[label_col].strip() for r in body], head[:label_col])


def _load_ecg() -> PlainData:
    d = data_dir()
    plain = os.path.join(d, "ecg.csv")
    if os.path.exists(plain):
        return read_csv(plain)
    parts = [os.path.join(d, f"ptbdb_{k}.csv") for k in ("normal", "abnormal")]
    if not all(os.path.exists(p) for p in parts):
        raise _missing("ecg.csv or ptbdb_normal.csv and ptbdb_abnormal.csv")
    arr = np.vstack([np.loadtxt(p, delimiter=",") for p in parts])
    return _finish(arr[:, :-1], [str(int(v)) for v in arr[:, -1]], [])
