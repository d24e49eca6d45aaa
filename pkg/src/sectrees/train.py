"""Secure training of ID3-style trees, random forests and extra-trees.

All trees of a batch are trained together along a leading tree axis, so an
ensemble of ``m`` trees costs the rounds of a single tree per batch.  Trees
are complete: every node of every level is computed, nodes below a
classifying node simply carry on as dummies, and no control flow depends
on shared values.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .aggregates import discretize, minmax
from .errors import PeerRefusal
from .model import Ensemble, Tree
from .oracle import min_instances
from .protocols import (Session, and_bits, bit_matmul, bit_to_ring, extract_bit, geq, matmul, mul,
                        not_bits)
from .ring import FixedPointCodec, Ring, truncate

MODELS = ("DT", "RF", "XT")


@dataclass
class TrainConfig:
    """Public hyperparameters shared by both parties.

    ``sel_feat`` and ``sel_inst`` of 0 mean "all features" and "all instances".
    ``lambda_train`` of 0 picks the smallest safe training ring.
    """

    model: str = "DT"
    bins: int = 5
    trees: int = 1
    sel_feat: int = 0
    sel_inst: int = 0
    depth: int = 4
    epsilon: float = 0.05
    lam: int = 64
    a: int = 10
    b: int = 22
    seed: int = 0
    scale: float = 1000.0
    lambda_train: int = 0
    xt_replace: bool = True
    parallel_trees: int = 0

    def __post_init__(self):
        self.model = self.model.upper()
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.model == "DT":
            self.trees = 1
        if self.bins < 2 or self.depth < 0 or self.trees < 1:
            raise ValueError("need bins >= 2, depth >= 0 and trees >= 1")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")
        FixedPointCodec(self.lam, self.a, self.b)

    @property
    def codec(self) -> FixedPointCodec:
        return FixedPointCodec(self.lam, self.a, self.b)

    @property
    def arity(self) -> int:
        return 2 if self.model == "XT" else self.bins

    def features_per_tree(self, f: int) -> int:
        return self.sel_feat or f

    def instances_per_tree(self, n: int) -> int:
        return self.sel_inst if self.model == "RF" and self.sel_inst else n

    def train_bits(self, n: int) -> int:
        """Ring width for Gini arithmetic on trees over ``n`` instances."""
        m = self.instances_per_tree(n)
        bound = self.arity * m ** (2 * self.arity + 1)
        need = 64
        while bound >= 1 << (need - 1):
            need += 64
        if self.lambda_train:
            if self.lambda_train < need:
                raise ValueError(f"lambda_train={self.lambda_train} too small; counts need {need} bits")
            return self.lambda_train
        return need

    def batch_sizes(self) -> list[int]:
        width = self.parallel_trees or self.trees
        return [min(width, self.trees - i) for i in range(0, self.trees, width)]

    # ---- key=value files -------------------------------------------------
    _KEYS = {"lambda": "lam"}

    @classmethod
    def parse(cls, text: str) -> "TrainConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {raw!r} is not key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = cls._KEYS.get(key, key)
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            t = types[key]
            if t == "bool":
                kw[key] = value.lower() in ("1", "true", "yes")
            elif t == "float":
                kw[key] = float(value)
            elif t == "int":
                kw[key] = int(value)
            else:
                kw[key] = value
        return cls(**kw)

    @classmethod
    def load(cls, path: str) -> "TrainConfig":
        with open(path) as fh:
            return cls.parse(fh.read())

    def dumps(self) -> str:
        inv = {v: k for k, v in self._KEYS.items()}
        return "".join(f"{inv.get(k, k)}={v}\n" for k, v in asdict(self).items())

    def fingerprint(self, n: int, f: int, c: int) -> str:
        """Hash of everything that fixes the sequence of randomness items."""
        blob = json.dumps({"config": asdict(self), "n": n, "f": f, "c": c}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class SecretTrees:
    """One party's shares of a batch of trees.

    ``split[l]`` is ``(T, p**l, F)`` ring shares of one-hot column selectors,
    ``counts[l]`` is ``(T, p**l, c)`` ring shares, ``classify[l]`` is
    ``(T, p**l)`` Z_2 shares.
    """

    bits: int
    split: list[np.ndarray]
    counts: list[np.ndarray]
    classify: list[np.ndarray]


def _bit_width(v: int) -> int:
    return max(1, int(v).bit_length())


def _mul_many(sess: Session, ring: Ring, pairs: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    """Several elementwise products (with broadcasting) in one round."""
    xs, ys, shapes = [], [], []
    for x, y in pairs:
        x, y = np.broadcast_arrays(x, y)
        shapes.append(x.shape)
        xs.append(x.reshape(-1))
        ys.append(y.reshape(-1))
    z = mul(sess, ring, np.concatenate(xs), np.concatenate(ys))
    out, pos = [], 0
    for s in shapes:
        size = int(np.prod(s, dtype=np.int64))
        out.append(z[pos:pos + size].reshape(s))
        pos += size
    return out


def _exclusive_products(sess: Session, ring: Ring, tp: np.ndarray):
    """For the last axis of ``tp``: products of all entries but one, and the full product."""
    p = tp.shape[-1]
    if p == 2:
        return [tp[..., 1], tp[..., 0]], None
    pre = {1: tp[..., 0]}
    suf = {p - 2: tp[..., p - 1]}
    for i in range(1, p - 1):
        # pre[i+1] = pre[i] * tp[i], suf[p-2-i] = suf[p-1-i] * tp[p-1-i]
        a, b = _mul_many(sess, ring, [(pre[i], tp[..., i]), (suf[p - 1 - i], tp[..., p - 1 - i])])
        pre[i + 1], suf[p - 2 - i] = a, b
    return pre, suf


def _gini_terms(sess: Session, ring: Ring, per: np.ndarray, zero: np.ndarray):
    """Numerator N and denominator D per (tree, node, feature).

    ``per`` holds counts ``(..., p, c)``; ``zero`` marks empty bins, which get
    a denominator of 1.  N = sum_v g_v prod_{w != v} t'_w and D = prod_v t'_v.
    """
    p = per.shape[-2]
    tv = ring.sum(per, axis=-1)
    tp = ring.add(tv, bit_to_ring(sess, ring, zero))
    if p == 2:
        sq, den = _mul_many(sess, ring, [(per, per), (tp[..., 0], tp[..., 1])])
        g = ring.sum(sq, axis=-1)
        (num,) = [ring.sum(v, axis=-1) for v in _mul_many(sess, ring, [(g, tp[..., ::-1])])]
        return num, den
    sq = mul(sess, ring, per, per)
    g = ring.sum(sq, axis=-1)
    pre, suf = _exclusive_products(sess, ring, tp)
    mids = [(pre[v], suf[v]) for v in range(1, p - 1)]
    res = _mul_many(sess, ring, mids + [(pre[p - 1], tp[..., p - 1])])
    excl = [suf[0]] + res[:-1] + [pre[p - 1]]
    den = res[-1]
    terms = _mul_many(sess, ring, [(g, np.stack(excl, axis=-1))])[0]
    return ring.sum(terms, axis=-1), den


def gini_argmax(sess: Session, ring: Ring, num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """One-hot ring shares over the last axis selecting the best num/den.

    Pairwise tournament: the left candidate wins when N_l * D_r >= N_r * D_l,
    so ties go to the lower index.  Each candidate carries a selector over
    the block of features it covers.
    """
    width = num.shape[-1]
    sel = sess.public(ring, np.ones(num.shape + (1,), dtype=np.int64))
    block = 1
    while num.shape[-1] > 1:
        cnt = num.shape[-1]
        pairs = cnt // 2
        l, r = slice(0, 2 * pairs, 2), slice(1, 2 * pairs, 2)
        nl, nr, dl, dr = num[..., l], num[..., r], den[..., l], den[..., r]
        left, right = _mul_many(sess, ring, [(nl, dr), (nr, dl)])
        c = bit_to_ring(sess, ring, geq(sess, ring, left, right, ring.bits))
        sl, sr = sel[..., l, :], sel[..., r, :]
        dn, dd, ml, mr = _mul_many(sess, ring, [(c, ring.sub(nl, nr)), (c, ring.sub(dl, dr)),
                                                 (c[..., None], sl), (c[..., None], sr)])
        nnum, nden = ring.add(nr, dn), ring.add(dr, dd)
        nsel = np.concatenate([ml, ring.sub(sr, mr)], axis=-1)
        if cnt % 2:
            last = sel[..., -1:, :]
            pad = ring.zeros(last.shape)
            nnum = np.concatenate([nnum, num[..., -1:]], axis=-1)
            nden = np.concatenate([nden, den[..., -1:]], axis=-1)
            nsel = np.concatenate([nsel, np.concatenate([last, pad], axis=-1)], axis=-2)
        num, den, sel = nnum, nden, nsel
        block *= 2
    return sel[..., 0, :width]


def sid3t(sess: Session, ring: Ring, x_bits: np.ndarray, y_bits: np.ndarray, depth: int,
          cutoff: int) -> SecretTrees:
    """Train a batch of complete trees on shared one-hot data.

    Args:
        ring: Training ring; tournament comparisons use its full width.
        x_bits: ``(T, n, F, p)`` Z_2 shares of one-hot feature bins.
        y_bits: ``(T, n, c)`` Z_2 shares of one-hot labels.
        depth: Public depth.
        cutoff: Nodes holding fewer instances than this classify.
    """
    T, n, F, p = x_bits.shape
    c = y_bits.shape[-1]
    lifted = bit_to_ring(sess, ring, np.concatenate([x_bits.reshape(T, n, F * p), y_bits], axis=-1))
    xq = lifted[..., :F * p]
    yq = lifted[..., F * p:]
    ind = sess.public(ring, np.ones((T, n, 1), dtype=np.int64))
    done = np.zeros((T, 1), dtype=np.uint8)
    alpha_cnt = _bit_width(max(n, cutoff) + 1) + 1
    cut = sess.public(ring, np.full((T, 1), cutoff, dtype=np.int64))
    zero_q = ring.zeros((T, 1))
    out = SecretTrees(ring.bits, [], [], [])
    for level in range(depth + 1):
        N = ind.shape[-1]
        if level < depth:
            z = mul(sess, ring, ind[..., None], yq[:, :, None, :])              # (T, n, N, c)
            cnt = ring.sum(z, axis=1)
            per = matmul(sess, ring, xq.transpose(0, 2, 1), z.reshape(T, n, N * c))
            per = per.reshape(T, F, p, N, c).transpose(0, 3, 1, 2, 4)           # (T, N, F, p, c)
        else:
            cnt = matmul(sess, ring, ind.transpose(0, 2, 1), yq)                # (T, N, c)
        tot = ring.sum(cnt, axis=-1)
        out.counts.append(cnt)
        if level == depth:
            classify = not_bits(sess, done)
            out.classify.append(classify)
            break
        tv = ring.sum(per, axis=-1)
        parts = [ring.sub(cnt, tot[..., None]), ring.sub(tot[..., None], cnt), ring.sub(tot, cut),
                 ring.sub(zero_q[..., None, None], tv)]
        m = extract_bit(sess, ring, np.concatenate([q.reshape(-1) for q in parts]), alpha_cnt)
        sizes = np.cumsum([q.size for q in parts])
        m1, m2, m3, m4 = np.split(m, sizes[:-1])
        same = np.bitwise_xor.reduce(m1.reshape(cnt.shape) ^ m2.reshape(cnt.shape), axis=-1)
        if sess.is_a and c % 2:
            same ^= 1          # XOR of c terms of the form 1 ^ m1 ^ m2
        small = m3.reshape(tot.shape)
        stop = same ^ small ^ and_bits(sess, same, small)
        classify = and_bits(sess, stop, not_bits(sess, done))
        out.classify.append(classify)
        done = done ^ classify
        empty = not_bits(sess, m4.reshape(tv.shape))
        num, den = _gini_terms(sess, ring, per, empty)
        sel = gini_argmax(sess, ring, num, den)                                 # (T, N, F)
        xs = xq.reshape(T, n, F, p).transpose(0, 1, 3, 2).reshape(T, n * p, F)
        chosen = matmul(sess, ring, xs, sel.transpose(0, 2, 1)).reshape(T, n, p, N)
        ind = mul(sess, ring, ind[:, :, None, :], chosen).transpose(0, 1, 3, 2).reshape(T, n, N * p)
        done = np.repeat(done, p, axis=1)
        out.split.append(sel)
    return out


# ---- ensembles ---------------------------------------------------------------

@dataclass
class SecretModel:
    """One party's shares of a trained ensemble plus what is needed to reveal it."""

    kind: str
    config: TrainConfig
    classes: int
    n_features: int
    batches: list[SecretTrees] = field(default_factory=list)
    feature_maps: list[np.ndarray] = field(default_factory=list)   # RF: Z_2 (T, f, k); XT: ring (T, f, k)
    cuts: list[np.ndarray] = field(default_factory=list)           # RF/DT: [(f, p-1)]; XT: per batch (T, k)
    revealed: Ensemble | None = None
    public: dict = field(default_factory=dict)                      # label names and scale, if known

    def destroy(self) -> None:
        self.batches, self.feature_maps, self.cuts = [], [], []

    def save(self, path: str) -> None:
        arrays = {}
        for bi, b in enumerate(self.batches):
            for name in ("split", "counts", "classify"):
                for li, arr in enumerate(getattr(b, name)):
                    arrays[f"b{bi}_{name}_{li}"] = arr
        for i, a in enumerate(self.feature_maps):
            arrays[f"fmap_{i}"] = a
        for i, a in enumerate(self.cuts):
            arrays[f"cuts_{i}"] = a
        meta = {"kind": self.kind, "config": self.config.dumps(), "classes": self.classes,
                "n_features": self.n_features, "batches": len(self.batches),
                "train_bits": [b.bits for b in self.batches], "maps": len(self.feature_maps),
                "ncuts": len(self.cuts), "public": self.public}
        np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path: str) -> "SecretModel":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            cfg = TrainConfig.parse(meta["config"])
            m = cls(meta["kind"], cfg, meta["classes"], meta["n_features"], public=meta.get("public", {}))
            for bi in range(meta["batches"]):
                levels = cfg.depth
                m.batches.append(SecretTrees(
                    meta["train_bits"][bi],
                    [z[f"b{bi}_split_{l}"] for l in range(levels)],
                    [z[f"b{bi}_counts_{l}"] for l in range(levels + 1)],
                    [z[f"b{bi}_classify_{l}"] for l in range(levels + 1)]))
            m.feature_maps = [z[f"fmap_{i}"] for i in range(meta["maps"])]
            m.cuts = [z[f"cuts_{i}"] for i in range(meta["ncuts"])]
        return m


def _check_inputs(cfg: TrainConfig, data: np.ndarray, labels: np.ndarray) -> tuple[int, int, int]:
    n, f = data.shape
    if labels.shape[0] != n:
        raise ValueError("labels and data disagree on the number of instances")
    if cfg.model == "RF" and cfg.features_per_tree(f) > f:
        raise ValueError("random forests select features without replacement: need sel_feat <= f")
    return n, f, labels.shape[1]


def dt_train(sess: Session, cfg: TrainConfig, data: np.ndarray, labels: np.ndarray) -> SecretModel:
    """Discretize every feature, then grow one tree on all instances and features."""
    n, f, c = _check_inputs(cfg, data, labels)
    codec, p = cfg.codec, cfg.arity
    tr = Ring(cfg.train_bits(n))
    ohe, h = discretize(sess, codec.ring, data, p, codec)
    trees = sid3t(sess, tr, ohe[None], labels[None], cfg.depth, min_instances(cfg.epsilon, n))
    return SecretModel("DT", cfg, c, f, [trees], [], [h])


def rf_train(sess: Session, cfg: TrainConfig, data: np.ndarray, labels: np.ndarray) -> SecretModel:
    """Discretize once; per tree select features and bootstrap instances with Z_2 matrix products."""
    n, f, c = _check_inputs(cfg, data, labels)
    codec, p = cfg.codec, cfg.arity
    k, s = cfg.features_per_tree(f), cfg.instances_per_tree(n)
    tr = Ring(cfg.train_bits(n))
    ohe, h = discretize(sess, codec.ring, data, p, codec)
    s_disc = ohe.reshape(n, f * p)
    model = SecretModel("RF", cfg, c, f, cuts=[h])
    for t in cfg.batch_sizes():
        fs = sess.rand.fs_rf(t, f, p, k)
        ss = sess.rand.ss(t, s, n)
        s_fs = bit_matmul(sess, s_disc, fs)                                      # (t, n, k p)
        both = np.concatenate([s_fs, np.broadcast_to(labels, (t, n, c))], axis=-1)
        picked = bit_matmul(sess, ss, both)                                      # (t, s, k p + c)
        x = picked[..., :k * p].reshape(t, s, k, p)
        y = picked[..., k * p:]
        model.batches.append(sid3t(sess, tr, x, y, cfg.depth, min_instances(cfg.epsilon, s)))
        model.feature_maps.append(fs[:, ::p, ::p])
    return model


def xt_train(sess: Session, cfg: TrainConfig, data: np.ndarray, labels: np.ndarray) -> SecretModel:
    """Random cut points per selected feature, binarize, then grow binary trees."""
    n, f, c = _check_inputs(cfg, data, labels)
    codec = cfg.codec
    ring = codec.ring
    k = cfg.features_per_tree(f)
    tr = Ring(cfg.train_bits(n))
    lo, hi = minmax(sess, ring, data.T, codec.cmp_bit)
    stacked = np.concatenate([data, ring.sub(hi, lo)[None], lo[None]], axis=0)   # (n + 2, f)
    model = SecretModel("XT", cfg, c, f)
    for t in cfg.batch_sizes():
        fs = sess.rand.fs_xt(ring, t, f, k, cfg.xt_replace)
        r = sess.rand.ratios(ring, t, k, codec.frac_bits)
        proj = matmul(sess, ring, stacked, fs)                                   # (t, n + 2, k)
        width, low = proj[:, n], proj[:, n + 1]
        alpha = ring.add(truncate(ring, mul(sess, ring, r, width), codec.frac_bits, sess.role), low)
        upper = geq(sess, ring, proj[:, :n], alpha[:, None, :], codec.cmp_bit)   # (t, n, k)
        x = np.stack([not_bits(sess, upper), upper], axis=-1)
        y = np.broadcast_to(labels, (t, n, c))
        model.batches.append(sid3t(sess, tr, x, y, cfg.depth, min_instances(cfg.epsilon, n)))
        model.feature_maps.append(fs)
        model.cuts.append(alpha)
    return model


def train(sess: Session, cfg: TrainConfig, data: np.ndarray, labels: np.ndarray) -> SecretModel:
    return {"DT": dt_train, "RF": rf_train, "XT": xt_train}[cfg.model](sess, cfg, data, labels)


# ---- reveal --------------------------------------------------------------------

def _onehot_index(sel: np.ndarray, what: str) -> np.ndarray:
    if not np.all(sel.sum(axis=-1) == 1):
        raise ValueError(f"revealed {what} is not one-hot")
    return np.argmax(sel, axis=-1).astype(np.int64)


def reveal_model(sess: Session, model: SecretModel, consent: bool = True) -> Ensemble:
    """Open a trained ensemble to both parties.

    Consent flags are exchanged first; if either party declines nothing is
    opened.  Shares are discarded afterwards and the plaintext copy is kept,
    so revealing again returns the same result without communication.
    """
    if model.revealed is not None:
        return model.revealed
    (peer,) = sess.chan.exchange([b"\x01" if consent else b"\x00"], 8)
    if not consent:
        raise PeerRefusal("this party declined to reveal the model")
    if peer != b"\x01":
        raise PeerRefusal("the peer declined to reveal the model")
    cfg, codec = model.config, model.config.codec
    ring = codec.ring
    f, p = model.n_features, cfg.arity
    trees: list[Tree] = []
    if model.kind in ("DT", "RF"):
        cuts_all = np.asarray(ring.to_signed(sess.reveal(ring, model.cuts[0])), dtype=np.int64)
    for bi, batch in enumerate(model.batches):
        tr = Ring(batch.bits)
        opened = sess.open_ring(tr, batch.split + batch.counts)
        split = [_onehot_index(np.asarray(tr.to_signed(s), dtype=np.int64), "split selector")
                 for s in opened[:cfg.depth]]
        counts = [np.asarray(tr.to_signed(cn), dtype=np.int64) for cn in opened[cfg.depth:]]
        flags = [sess.reveal_bits(cl).astype(bool) for cl in batch.classify]
        t = counts[0].shape[0]
        if model.kind == "DT":
            feats = np.arange(f)[None]
            cuts = cuts_all[None]
        elif model.kind == "RF":
            fmap = sess.reveal_bits(model.feature_maps[bi])                     # (t, f, k)
            feats = _onehot_index(fmap.transpose(0, 2, 1), "feature map")
            cuts = cuts_all[feats]
        else:
            fmap = sess.reveal(ring, model.feature_maps[bi])
            feats = _onehot_index(np.asarray(ring.to_signed(fmap), dtype=np.int64).transpose(0, 2, 1),
                                  "feature map")
            cuts = np.asarray(ring.to_signed(sess.reveal(ring, model.cuts[bi])), dtype=np.int64)[..., None]
        for i in range(t):
            trees.append(Tree(p, cfg.depth, [s[i] for s in split], [cn[i] for cn in counts],
                              [fl[i] for fl in flags], feats[i], cuts[i]))
    model.revealed = Ensemble(model.kind, trees, model.classes, codec, cfg.scale)
    model.destroy()
    return model.revealed
