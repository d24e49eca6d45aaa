"""Command-line entry point: ti-gen, share-data, train, reveal, evaluate and bench."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import model as model_io
from .bench import run_bench, save_report
from .errors import ConfigMismatch, RandomnessExhausted, SecTreesError, TransportError
from .ingest import DatasetUnavailable, ShareFile, load_named, read_csv, reconstruct, split_csv
from .protocols import Session
from .ring import FixedPointCodec
from .runtime import run_two_party
from .sharing import FileRandomness, NoRandomness, RandomnessFileWriter, TrustedInitializer, write_randomness_files
from .train import SecretModel, TrainConfig, reveal_model, train
from .transport import TcpChannel

log = logging.getLogger("sectrees")

LOG_ENV = "SECTREES_LOG_LEVEL"
EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_TRANSPORT, EXIT_RANDOMNESS = 0, 1, 2, 3, 4


def _addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _open_channel(args, role: str) -> TcpChannel:
    if args.listen:
        log.info("waiting for the peer on %s:%d", *args.listen)
        return TcpChannel.listen(*args.listen, role, timeout=args.timeout)
    log.info("connecting to %s:%d", *args.connect)
    return TcpChannel.connect(*args.connect, role, timeout=args.timeout, retry_for=args.connect_retry)


def _training_rows(shares: ShareFile, fold: int | None) -> np.ndarray:
    if fold is None:
        return np.arange(shares.header["n"])
    return shares.fold_split(fold)[0]


def _session_info(cfg: TrainConfig, n: int, f: int, c: int) -> dict:
    return {"lambda": cfg.lam, "codec": str(cfg.codec), "plan": cfg.fingerprint(n, f, c), "config": cfg.dumps()}


# ---- verbs ---------------------------------------------------------------------

def _dry_run(sess, cfg, features, labels):
    train(sess, cfg, features, labels)


def plan_items(plan: dict, base: str = ".") -> tuple[TrainConfig | None, int, int, int]:
    """Config and data shape of a training plan."""
    cfg_ref = plan["config"]
    cfg = TrainConfig.parse(cfg_ref) if "\n" in cfg_ref or "=" in cfg_ref else TrainConfig.load(
        os.path.join(base, cfg_ref))
    if "shares" in plan:
        sf = ShareFile.read(os.path.join(base, plan["shares"]))
        n = len(_training_rows(sf, plan.get("fold")))
        return cfg, n, sf.header["f"], sf.header["c"]
    return cfg, int(plan["n"]), int(plan["f"]), int(plan["c"])


def cmd_ti_gen(args) -> int:
    with open(args.plan) as fh:
        plan = json.load(fh)
    if "items" in plan:
        write_randomness_files(plan["items"], args.seed, args.out_a, args.out_b,
                               plan.get("fingerprint", ""), plan.get("ring_bits", 64))
        log.info("wrote %d items", len(plan["items"]))
        return EXIT_OK
    cfg, n, f, c = plan_items(plan, os.path.dirname(os.path.abspath(args.plan)))
    # The protocols are data-independent, so a run on zero shares consumes
    # exactly the items a real run will.
    writer = RandomnessFileWriter(args.out_a, args.out_b, args.seed, cfg.fingerprint(n, f, c), cfg.lam)
    ring = cfg.codec.ring
    feats, labels = ring.zeros((n, f)), np.zeros((n, c), dtype=np.uint8)
    run_two_party(_dry_run, (cfg, feats, labels), (cfg, feats, labels),
                  dealer=TrustedInitializer(args.seed, sink=writer))
    writer.close()
    log.info("wrote %d items for %s on n=%d f=%d c=%d", len(writer.header["items"]), cfg.model, n, f, c)
    return EXIT_OK


def cmd_share_data(args) -> int:
    codec = FixedPointCodec.parse(args.codec)
    a, b = split_csv(args.input, codec, args.seed, args.scale, args.drop_sparse, args.folds)
    a.write(args.out_a)
    b.write(args.out_b)
    log.info("shared %d rows x %d features", a.header["n"], a.header["f"])
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig.load(args.config)
    shares = ShareFile.read(args.shares)
    rows = _training_rows(shares, args.fold)
    feats, labels = shares.rows(rows)
    n, f, c = len(rows), shares.header["f"], shares.header["c"]
    if shares.codec != cfg.codec:
        raise ConfigMismatch(f"shares use codec {shares.codec}, config asks for {cfg.codec}")
    rand = FileRandomness(args.randomness)
    want = cfg.fingerprint(n, f, c)
    if rand.header["plan_fingerprint"] != want:
        raise ConfigMismatch("randomness file was generated for a different config or data shape")
    if rand.role != args.role:
        raise ConfigMismatch(f"randomness file belongs to party {rand.role}, not {args.role}")
    with _open_channel(args, args.role) as chan:
        chan.handshake(_session_info(cfg, n, f, c))
        sess = Session(chan, rand)
        secret = train(sess, cfg, feats, labels)
        secret.public = {"labels": shares.header.get("classes"), "scale": shares.header["scale"]}
        log.info("trained: %d rounds, %d payload bits", chan.metrics.rounds, chan.metrics.payload_bits)
        if args.out:
            secret.save(args.out)
        if args.reveal:
            ens = reveal_model(sess, secret)
            ens.labels, ens.scale = secret.public["labels"], secret.public["scale"]
            model_io.save(ens, args.reveal)
        if args.metrics:
            with open(args.metrics, "w") as fh:
                json.dump({"rounds": chan.metrics.rounds, "payload_bits": chan.metrics.payload_bits,
                           "wire_bytes": chan.metrics.wire_bytes}, fh)
    if rand.remaining:
        log.warning("%d randomness items left unused", rand.remaining)
    return EXIT_OK


def cmd_reveal(args) -> int:
    secret = SecretModel.load(args.model_shares)
    with _open_channel(args, args.role) as chan:
        chan.handshake({"kind": secret.kind, "config": secret.config.dumps(), "trees": secret.config.trees})
        ens = reveal_model(Session(chan, NoRandomness(args.role)), secret, consent=not args.decline)
    ens.labels = secret.public.get("labels", ens.labels)
    ens.scale = secret.public.get("scale", ens.scale)
    model_io.save(ens, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ens = model_io.load(args.model)
    if args.csv:
        data = read_csv(args.csv)
        if args.scale:
            ens.scale = args.scale
        rows = np.arange(len(data.y))
        acc = ens.accuracy(data.x, data.y)
    else:
        a, b = ShareFile.read(args.shares_a), ShareFile.read(args.shares_b)
        feats, onehot = reconstruct(a, b)
        rows = a.fold_split(args.fold)[1] if args.fold is not None else np.arange(a.header["n"])
        enc = np.asarray(a.codec.ring.to_signed(feats[rows]), dtype=np.int64)
        pred = np.array([ens.predict_encoded(r)[0] for r in enc])
        acc = float(np.mean(pred == np.argmax(onehot[rows], axis=1)))
    print(f"accuracy = {acc:.6f}")
    print(f"instances = {len(rows)}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.data_dir:
        os.environ["SECTREES_DATA"] = args.data_dir
    cfg = TrainConfig.load(args.config)
    data, scale = load_named(args.dataset, args.subsample, cfg.seed)
    if args.scale:
        scale = args.scale
    report = run_bench(args.dataset, data, scale, cfg, args.folds, args.transport, args.fold)
    sys.stdout.write(report.to_text())
    if args.out:
        for p in save_report(report, args.out, figures=not args.no_figures):
            log.info("wrote %s", p)
    return EXIT_OK


# ---- parser ------------------------------------------------------------------------

def _peer_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--role", choices=("A", "B"), required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--listen", type=_addr, metavar="HOST:PORT")
    g.add_argument("--connect", type=_addr, metavar="HOST:PORT")
    p.add_argument("--timeout", type=float, default=600.0, help="socket deadline in seconds")
    p.add_argument("--connect-retry", type=float, default=30.0, help="seconds to keep retrying --connect")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sectrees", description="Two-party secure training of tree ensembles.")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ti-gen", help="generate per-party randomness files")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--plan", required=True, help="JSON plan: {config, n, f, c}, {config, shares, fold} or {items}")
    p.add_argument("--out-a", required=True)
    p.add_argument("--out-b", required=True)
    p.set_defaults(fn=cmd_ti_gen)

    p = sub.add_parser("share-data", help="split a CSV into two share files")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--codec", default="64:10:22")
    p.add_argument("--scale", type=float, default=1000.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-a", required=True)
    p.add_argument("--out-b", required=True)
    p.add_argument("--drop-sparse", type=float, default=None, metavar="FRAC")
    p.add_argument("--folds", type=int, default=None)
    p.set_defaults(fn=cmd_share_data)

    p = sub.add_parser("train", help="run one party of a training session")
    _peer_args(p)
    p.add_argument("--config", required=True)
    p.add_argument("--shares", required=True)
    p.add_argument("--randomness", required=True)
    p.add_argument("--fold", type=int, default=None, help="train on all rows outside this stored fold")
    p.add_argument("--out", help="write this party's model shares (.npz)")
    p.add_argument("--reveal", metavar="MODEL", help="reveal after training and write the model here")
    p.add_argument("--metrics", help="write rounds and payload bits as JSON")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("reveal", help="open stored model shares with the peer")
    _peer_args(p)
    p.add_argument("--model-shares", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--decline", action="store_true", help="refuse to reveal")
    p.set_defaults(fn=cmd_reveal)

    p = sub.add_parser("evaluate", help="accuracy of a revealed model")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv")
    src.add_argument("--shares-a")
    p.add_argument("--shares-b")
    p.add_argument("--fold", type=int, default=None, help="evaluate on this stored fold only")
    p.add_argument("--scale", type=float, default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("bench", help="k-fold cross-validation with an in-process dealer")
    p.add_argument("--dataset", required=True, help="bc, back, ecg or a CSV path")
    p.add_argument("--config", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fold", type=int, action="append", default=None, help="run only these folds")
    p.add_argument("--transport", choices=("tcp", "local"), default="tcp")
    p.add_argument("--subsample", type=int, default=None)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", default=None, help="directory for report.txt, folds.csv and figures")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.verb == "evaluate" and args.shares_a and not args.shares_b:
        log.error("--shares-a needs --shares-b")
        return EXIT_ERROR
    try:
        return args.fn(args)
    except ConfigMismatch as exc:
        log.error("configuration mismatch: %s", exc)
        return EXIT_CONFIG
    except TransportError as exc:
        log.error("transport failure: %s", exc)
        return EXIT_TRANSPORT
    except RandomnessExhausted as exc:
        log.error("randomness: %s", exc)
        return EXIT_RANDOMNESS
    except (SecTreesError, DatasetUnavailable, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
