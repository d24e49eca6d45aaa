"""Cross-validated benchmark runs over loopback TCP with an in-process TI."""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import PlainData, kfold, share_dataset
from .model import Ensemble
from .runtime import run_two_party
from .sharing import TrustedInitializer
from .train import TrainConfig, reveal_model, train

log = logging.getLogger(__name__)


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    seconds: float
    rounds: int
    payload_bits: int
    train_size: int
    test_size: int


@dataclass
class RunReport:
    dataset: str
    model: str
    transport: str
    config: dict
    folds: list[FoldResult] = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.accuracy for f in self.folds])) if self.folds else float("nan")

    @property
    def total_seconds(self) -> float:
        return float(sum(f.seconds for f in self.folds))

    @property
    def total_rounds(self) -> int:
        return int(sum(f.rounds for f in self.folds))

    @property
    def total_payload_bits(self) -> int:
        return int(sum(f.payload_bits for f in self.folds))

    def to_text(self) -> str:
        lines = ["[run]", f"dataset = {self.dataset}", f"model = {self.model}", f"transport = {self.transport}",
                 f"folds = {len(self.folds)}", f"mean_accuracy = {self.mean_accuracy:.6f}",
                 f"online_seconds = {self.total_seconds:.3f}", f"total_rounds = {self.total_rounds}",
                 f"total_payload_bits = {self.total_payload_bits}", "", "[config]"]
        lines += [f"{k} = {v}" for k, v in self.config.items()]
        lines += ["", "[folds]", self.to_csv().rstrip("\n")]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(asdict(self.folds[0]).keys()) if self.folds else [f.name for f in FoldResult.__dataclass_fields__.values()]
        w.writerow(names)
        for f in self.folds:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in asdict(f).values()])
        return buf.getvalue()

    def without_timing(self) -> dict:
        d = asdict(self)
        for f in d["folds"]:
            f.pop("seconds")
        return d


def _party(sess, cfg, features, labels):
    model = train(sess, cfg, features, labels)
    return reveal_model(sess, model)


def train_fold(data: PlainData, scale: float, cfg: TrainConfig, rows: np.ndarray, seed: int,
               transport: str = "tcp") -> tuple[Ensemble, int, int, float]:
    """Share the given rows, train and reveal with two threads; returns model, rounds, bits, seconds."""
    sub = PlainData(data.x[rows], data.y[rows], data.classes, data.names, data.kept)
    a, b = share_dataset(sub, cfg.codec, scale, seed)
    dealer = TrustedInitializer(seed + 1)
    start = time.perf_counter()
    res = run_two_party(_party, (cfg, a.features, a.labels), (cfg, b.features, b.labels),
                        dealer=dealer, transport=transport)
    elapsed = time.perf_counter() - start
    if not all(x.same_structure(y) for x, y in zip(res.a.trees, res.b.trees)):
        raise RuntimeError("parties revealed different models")
    m = res.metrics["A"]
    return res.a, m.rounds, m.payload_bits, elapsed


def run_bench(name: str, data: PlainData, scale: float, cfg: TrainConfig, folds: int = 5,
              transport: str = "tcp", fold_ids: list[int] | None = None) -> RunReport:
    """k-fold cross-validation of one configuration."""
    report = RunReport(name, cfg.model, transport, dict(asdict(cfg), scale=scale))
    splits = kfold(len(data.y), folds, cfg.seed)
    for i, (tr, te) in enumerate(splits):
        if fold_ids is not None and i not in fold_ids:
            continue
        model, rounds, bits, secs = train_fold(data, scale, cfg, tr, cfg.seed + 1000 * (i + 1), transport)
        model.scale = scale
        acc = model.accuracy(data.x[te], data.y[te])
        log.info("fold %d: accuracy %.4f, %.1fs, %d rounds, %d bits", i, acc, secs, rounds, bits)
        report.folds.append(FoldResult(i, acc, secs, rounds, bits, len(tr), len(te)))
    return report


def save_report(report: RunReport, out_dir: str, figures: bool = True) -> list[str]:
    """Write report.txt, folds.csv and (optionally) PNG figures into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, "report.txt"), os.path.join(out_dir, "folds.csv")]
    with open(paths[0], "w") as fh:
        fh.write(report.to_text())
    with open(paths[1], "w") as fh:
        fh.write(report.to_csv())
    if figures:
        from .plots import plot_report

        paths += plot_report(report, out_dir)
    return paths
