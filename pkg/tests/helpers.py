"""Shared harness code for the test suite."""

from __future__ import annotations

import numpy as np

from sectrees import oracle
from sectrees.ring import FixedPointCodec, Ring
from sectrees.runtime import run_two_party
from sectrees.sharing import TrustedInitializer, reveal, reveal_bits, share, share_bits
from sectrees.train import reveal_model, train


def shares(ring: Ring, values, seed: int = 0):
    return share(ring, ring.from_ints(np.asarray(values, dtype=object)), np.random.default_rng(seed))


def run_ring(fn, ring: Ring, *inputs, seed: int = 0, **kw):
    """Run ``fn(sess, *shares)`` on shared integer inputs; returns (opened ints, result)."""
    split = [shares(ring, x, seed + i) for i, x in enumerate(inputs)]
    res = run_two_party(fn, tuple(s[0] for s in split), tuple(s[1] for s in split), seed=seed, **kw)
    return res


def open_ring(ring: Ring, res) -> np.ndarray:
    return np.asarray(ring.to_signed(reveal(ring, res.a, res.b)), dtype=object)


def open_bits(res) -> np.ndarray:
    return reveal_bits(res.a, res.b)


def _party(sess, cfg, data, labels):
    return reveal_model(sess, train(sess, cfg, data, labels))


def secure_and_oracle(cfg, ints: np.ndarray, y: np.ndarray, classes: int, seed: int = 0,
                      codec: FixedPointCodec = FixedPointCodec(), transport: str = "local"):
    """Train securely with a recording TI and rebuild the same ensemble in the clear."""
    ring = codec.ring
    rng = np.random.default_rng(seed)
    da, db = share(ring, ring.from_ints(np.asarray(ints, dtype=object)), rng)
    ya, yb = share_bits(np.eye(classes, dtype=np.uint8)[y], rng)
    ti = TrustedInitializer(seed + 17, keep_plain=True)
    res = run_two_party(_party, (cfg, da, ya), (cfg, db, yb), dealer=ti, transport=transport, trace=True)
    plain = {}
    for spec, values in ti.plain:
        for k, v in values.items():
            plain.setdefault(k, []).append(v)
    cat = {k: np.concatenate(v, axis=0) for k, v in plain.items()}
    if cfg.model == "DT":
        ref = oracle.oracle_dt(ints, y, classes, cfg.bins, cfg.depth, cfg.epsilon, codec)
    elif cfg.model == "RF":
        ref = oracle.oracle_rf(ints, y, classes, cfg.bins, cfg.depth, cfg.epsilon, cat["features"],
                               cat["instances"], codec)
    else:
        ref = oracle.oracle_xt(ints, y, classes, cfg.depth, cfg.epsilon, cat["features"], cat["ratios"], codec)
    return res, ref
