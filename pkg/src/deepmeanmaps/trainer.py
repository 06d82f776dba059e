"""Momentum SGD with a step schedule, periodic snapshots and validation-based selection."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .network import Network, NetworkSpec, save_model
from .synth import Split
from .tensor import Rng, derive_seed


class DivergenceError(RuntimeError):
    """Training loss became non-finite. ``snapshot`` is the last good one (or None)."""

    def __init__(self, message: str, snapshot: "Snapshot | None"):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class SgdConfig:
    """Plain momentum SGD settings.

    ``decay_every`` is in epochs; ``None`` means a third of ``epochs``.
    """

    lr: float = 0.01
    momentum: float = 0.9
    decay: float = 0.1
    decay_every: int | None = None
    batch_size: int = 32
    epochs: int = 30
    snapshot_every: int = 1
    seed: int = 0
    calibrate: bool = True
    eval_batch: int = 64
    topk: int = 3

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not self.decay > 0:
            raise ValueError("decay factor must be > 0")
        if self.batch_size < 1 or self.epochs < 0 or self.snapshot_every < 1:
            raise ValueError("batch_size, snapshot_every >= 1 and epochs >= 0 required")
        if self.decay_every is not None and self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")
        if self.topk < 1:
            raise ValueError("topk must be >= 1")

    @property
    def step_interval(self) -> int:
        return self.decay_every or max(1, -(-self.epochs // 3))

    def rate_at(self, epoch: int) -> float:
        """Learning rate in effect during (0-based) ``epoch``."""
        return self.lr * self.decay ** (epoch // self.step_interval)


@dataclass
class Record:
    time_s: float
    epoch: int
    split: str
    top1: float
    topk: float
    loss: float


@dataclass
class MetricsLog:
    records: list[Record] = field(default_factory=list)
    k: int = 3
    best_snapshot: int | None = None

    def add(self, rec: Record) -> None:
        if self.records and rec.time_s < self.records[-1].time_s:
            raise ValueError("timestamps must be non-decreasing")
        if not (0 <= rec.top1 <= 1 and 0 <= rec.topk <= 1):
            raise ValueError("accuracies must lie in [0, 1]")
        self.records.append(rec)

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_s", "epoch", "split", "top1", "topk", "loss"])
        for r in self.records:
            w.writerow([f"{r.time_s:.6f}", r.epoch, r.split, repr(r.top1), repr(r.topk), repr(r.loss)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"k": self.k, "best_snapshot": self.best_snapshot,
                "records": [asdict(r) for r in self.records]}

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "metrics.csv").write_text(self.to_csv())
        (d / "metrics.json").write_text(json.dumps(self.to_json(), indent=2) + "\n")


@dataclass
class Snapshot:
    epoch: int
    params: dict[str, np.ndarray]
    val_top1: float


@dataclass
class TrainResult:
    best_params: dict[str, np.ndarray]
    log: MetricsLog
    snapshots: list[Snapshot]
    best_index: int


def topk_hits(logits, labels, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample top-1 and top-k hits, ties broken in favour of the lower class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if not 1 <= k <= c:
        raise ValueError(f"k must be in [1, {c}], got {k}")
    own = logits[np.arange(n), labels][:, None]
    lower = np.arange(c)[None, :] < labels[:, None]
    rank = np.sum((logits > own) | ((logits == own) & lower), axis=1)
    return rank < 1, rank < k


def evaluate(spec: NetworkSpec, params: dict, data: Split, k: int = 3,
             batch_size: int = 64) -> tuple[float, float]:
    """Top-1 and top-k accuracy of the network on a split."""
    classes = spec.shapes[spec.output][0]
    if not 1 <= k <= classes:
        raise ValueError(f"k must be in [1, {classes}], got {k}")
    top1, topk, _ = _score(Network(spec, params), data, k, batch_size)
    return top1, topk


def _score(net: Network, data: Split, k: int, batch_size: int):
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty split")
    k = min(k, net.spec.shapes[net.spec.output][0])
    losses, logits = [], []
    for i in range(0, len(data), batch_size):
        xb, yb = data.images[i:i + batch_size], data.labels[i:i + batch_size]
        losses.append(net.forward(xb, yb, training=False) * len(yb))
        logits.append(net.activations[net.spec.output])
    labels = data.labels
    if labels.ndim == 2:  # regression targets: a hit when the largest outputs agree
        labels = np.argmax(labels, axis=1)
    h1, hk = topk_hits(np.concatenate(logits), labels, k)
    return float(h1.mean()), float(hk.mean()), float(sum(losses) / len(data))


def train(spec: NetworkSpec, params: dict, train_split: Split, val_split: Split,
          config: SgdConfig = SgdConfig(), extra_splits: dict[str, Split] | None = None,
          on_record=None) -> TrainResult:
    """Momentum SGD on ``params`` (updated in place); returns the snapshot with
    the highest validation top-1, earliest on ties.

    Every ``snapshot_every`` epochs (and before the first) the train,
    validation and any ``extra_splits`` are scored and logged.
    """
    if len(train_split) == 0:
        raise ValueError("empty training split")
    if len(val_split) == 0:
        raise ValueError("empty validation split")
    net = Network(spec, params, seed=derive_seed(config.seed, "network"))
    if config.calibrate and any(n.kind == "meanmap" for n in spec.nodes):
        net.calibrate(train_split.images[:64], seed=derive_seed(config.seed, "calibrate"))
    trainable = [sid for sid, info in spec.slots.items() if info.trainable]
    velocity = {sid: np.zeros_like(params[sid]) for sid in trainable}
    splits = {"train": train_split, "val": val_split, **(extra_splits or {})}
    log = MetricsLog(k=config.topk)
    snapshots: list[Snapshot] = []
    start = time.perf_counter()

    def checkpoint(epoch):
        val_top1 = None
        for name, data in splits.items():
            top1, topk, loss = _score(net, data, config.topk, config.eval_batch)
            if name == "val":
                val_top1 = top1
            rec = Record(time.perf_counter() - start, epoch, name, top1, topk, loss)
            log.add(rec)
            if on_record is not None:
                on_record(rec)
        snapshots.append(Snapshot(epoch, {k: v.copy() for k, v in params.items()}, val_top1))

    checkpoint(0)
    n = len(train_split)
    for epoch in range(config.epochs):
        lr = config.rate_at(epoch)
        order = Rng(derive_seed(config.seed, "shuffle", epoch)).generator.permutation(n)
        for b in range(0, n, config.batch_size):
            idx = order[b:b + config.batch_size]
            loss = net.forward(train_split.images[idx], train_split.labels[idx], training=True)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} in epoch {epoch + 1}",
                                      snapshots[-1] if snapshots else None)
            grads = net.backward()
            for sid in trainable:
                v = velocity[sid]
                v *= config.momentum
                v -= lr * grads[sid]
                params[sid] += v
        if (epoch + 1) % config.snapshot_every == 0 or epoch + 1 == config.epochs:
            checkpoint(epoch + 1)
    best = int(np.argmax([s.val_top1 for s in snapshots]))  # first maximum
    log.best_snapshot = best
    return TrainResult(snapshots[best].params, log, snapshots, best)


def accuracy_vs_time(log: MetricsLog) -> dict[str, list[tuple[float, float]]]:
    """(seconds, top-1) rows per split, sorted by time."""
    table: dict[str, list[tuple[float, float]]] = {}
    for r in sorted(log.records, key=lambda r: r.time_s):
        table.setdefault(r.split, []).append((r.time_s, r.top1))
    return table


def accuracy_vs_time_csv(log: MetricsLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "time_s", "top1"])
    for split, rows in accuracy_vs_time(log).items():
        for t, acc in rows:
            w.writerow([split, f"{t:.6f}", repr(acc)])
    return buf.getvalue()


def save_run(directory, spec: NetworkSpec, result: TrainResult) -> Path:
    """model/ (best), snapshots/epoch_NNNN/ and metrics files."""
    d = Path(directory)
    save_model(d / "model", spec, result.best_params)
    for snap in result.snapshots:
        save_model(d / "snapshots" / f"epoch_{snap.epoch:04d}", spec, snap.params)
    result.log.save(d)
    return d
