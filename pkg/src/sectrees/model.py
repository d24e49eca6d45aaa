"""Plaintext tree ensembles: structure, soft-voting prediction and the model file.

A tree is complete with public depth ``d`` and arity ``p``.  Level ``l`` has
``p**l`` nodes; child ``v`` of node ``i`` sits at index ``i*p + v`` on the next
level.  Each tree reads ``F`` columns; column ``j`` tests original feature
``features[j]`` against its ascending cut points ``cuts[j]`` (fixed-point
integers), and the bin of a value is the number of cut points it reaches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelFormatError
from .ring import FixedPointCodec

MODEL_FORMAT = "sectrees-model"
MODEL_VERSION = 1


@dataclass
class Tree:
    arity: int
    depth: int
    split: list[np.ndarray]      # per level < depth: column index per node
    counts: list[np.ndarray]     # per level <= depth: (nodes, classes) instance counts
    classify: list[np.ndarray]   # per level <= depth: bool per node
    features: np.ndarray         # (F,) original feature index per column
    cuts: np.ndarray             # (F, arity - 1) fixed-point cut points per column

    def same_structure(self, other: "Tree") -> bool:
        """Splits, frequencies and classify flags all equal."""
        if (self.arity, self.depth) != (other.arity, other.depth):
            return False
        return (all(np.array_equal(a, b) for a, b in zip(self.split, other.split))
                and all(np.array_equal(a, b) for a, b in zip(self.counts, other.counts))
                and all(np.array_equal(a, b) for a, b in zip(self.classify, other.classify))
                and np.array_equal(self.features, other.features))

    def split_feature(self, level: int) -> np.ndarray:
        return self.features[self.split[level]]

    def vote(self, x_enc: np.ndarray) -> np.ndarray:
        """Normalized class frequencies of the classifying node reached by one encoded instance."""
        idx, best = 0, None
        for level in range(self.depth + 1):
            cnt = self.counts[level][idx]
            if cnt.sum() > 0:
                best = cnt
            if self.classify[level][idx]:
                # an empty classifying node falls back to its nearest non-empty ancestor
                chosen = cnt if cnt.sum() > 0 else best
                if chosen is None:
                    return np.full(cnt.shape, 1.0 / cnt.size)
                return chosen / chosen.sum()
            if level == self.depth:
                break
            col = self.split[level][idx]
            v = int(np.sum(x_enc[self.features[col]] >= self.cuts[col]))
            idx = idx * self.arity + v
        raise ModelFormatError("no classifying node on the path")

    def classify_paths_ok(self) -> bool:
        """Every root-to-leaf path carries exactly one classify flag."""
        flags = self.classify[0].astype(int)
        for level in range(1, self.depth + 1):
            flags = np.repeat(flags, self.arity) + self.classify[level].astype(int)
        return bool(np.all(flags == 1))


@dataclass
class Ensemble:
    kind: str                    # DT, RF or XT
    trees: list[Tree]
    classes: int
    codec: FixedPointCodec = field(default_factory=FixedPointCodec)
    scale: float = 1000.0
    labels: list[str] | None = None

    def encode(self, x) -> np.ndarray:
        """Signed fixed-point integers of scaled plaintext features."""
        enc = self.codec.encode(np.asarray(x, dtype=np.float64) * self.scale)
        return np.asarray(self.codec.ring.to_signed(enc), dtype=np.int64)

    def scores_encoded(self, x_enc: np.ndarray) -> np.ndarray:
        return np.sum([t.vote(x_enc) for t in self.trees], axis=0) / len(self.trees)

    def predict_encoded(self, x_enc: np.ndarray) -> tuple[int, np.ndarray]:
        s = self.scores_encoded(x_enc)
        return int(np.argmax(s)), s

    def predict(self, x) -> tuple[int, np.ndarray]:
        """Class index and per-class scores for one plaintext instance."""
        return self.predict_encoded(self.encode(x))

    def predict_many(self, X) -> np.ndarray:
        enc = self.encode(X)
        return np.array([self.predict_encoded(row)[0] for row in enc], dtype=np.int64)

    def accuracy(self, X, y) -> float:
        return float(np.mean(self.predict_many(X) == np.asarray(y)))


def _ints(a) -> str:
    return ",".join(str(int(v)) for v in np.ravel(a)) or "-"


def _parse_ints(text: str) -> list[int]:
    return [] if text == "-" else [int(v) for v in text.split(",")]


def dumps(model: Ensemble) -> str:
    """Render the line-oriented model format (one record per node)."""
    out = [f"# {MODEL_FORMAT} v{MODEL_VERSION}",
           f"model kind={model.kind} trees={len(model.trees)} classes={model.classes} "
           f"codec={model.codec} scale={model.scale!r}"]
    if model.labels:
        out.append("labels " + ",".join(model.labels))
    for ti, tree in enumerate(model.trees):
        out.append(f"tree {ti} arity={tree.arity} depth={tree.depth} columns={len(tree.features)}")
        for j, (feat, cut) in enumerate(zip(tree.features, tree.cuts)):
            out.append(f"column {j} feature={int(feat)} cuts={_ints(cut)}")
        node = 0
        for level in range(tree.depth + 1):
            for i in range(tree.arity ** level):
                if level < tree.depth:
                    col = int(tree.split[level][i])
                    feat, cuts = int(tree.features[col]), _ints(tree.cuts[col])
                else:
                    col, feat, cuts = -1, -1, "-"
                branch = i % tree.arity if level else -1
                out.append(f"node {node} level={level} index={i} branch={branch} feature={feat} column={col} "
                           f"cuts={cuts} freqs={_ints(tree.counts[level][i])} "
                           f"classify={int(tree.classify[level][i])}")
                node += 1
        out.append("end")
    return "\n".join(out) + "\n"


def loads(text: str) -> Ensemble:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(f"# {MODEL_FORMAT} v"):
        raise ModelFormatError("missing model header")
    if int(lines[0].rsplit("v", 1)[1]) != MODEL_VERSION:
        raise ModelFormatError("unsupported model version")

    def kv(parts):
        return dict(p.split("=", 1) for p in parts)

    try:
        head = kv(lines[1].split()[1:])
        model = Ensemble(head["kind"], [], int(head["classes"]), FixedPointCodec.parse(head["codec"]),
                         float(head["scale"]))
        pos = 2
        if lines[pos].startswith("labels "):
            model.labels = lines[pos][7:].split(",")
            pos += 1
        while pos < len(lines):
            words = lines[pos].split()
            if words[0] != "tree":
                raise ModelFormatError(f"expected tree record, got {lines[pos]!r}")
            t = kv(words[2:])
            arity, depth, ncols = int(t["arity"]), int(t["depth"]), int(t["columns"])
            pos += 1
            feats, cuts = [], []
            for _ in range(ncols):
                c = kv(lines[pos].split()[2:])
                feats.append(int(c["feature"]))
                cuts.append(_parse_ints(c["cuts"]))
                pos += 1
            split = [np.zeros(arity ** l, dtype=np.int64) for l in range(depth)]
            counts = [np.zeros((arity ** l, model.classes), dtype=np.int64) for l in range(depth + 1)]
            classify = [np.zeros(arity ** l, dtype=bool) for l in range(depth + 1)]
            while lines[pos] != "end":
                n = kv(lines[pos].split()[2:])
                level, i = int(n["level"]), int(n["index"])
                if level < depth:
                    split[level][i] = int(n["column"])
                counts[level][i] = _parse_ints(n["freqs"])
                classify[level][i] = n["classify"] == "1"
                pos += 1
            pos += 1
            model.trees.append(Tree(arity, depth, split, counts, classify, np.array(feats, dtype=np.int64),
                                    np.array(cuts, dtype=np.int64).reshape(ncols, arity - 1)))
    except (KeyError, ValueError, IndexError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    return model


def save(model: Ensemble, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(model))


def load(path: str) -> Ensemble:
    with open(path) as fh:
        return loads(fh.read())
