"""Dataset splits, per-target training loops, metrics, and the size-generalization study.

One model is trained per prediction target. Resource targets are regressed
on log1p-standardized labels (they span orders of magnitude); timing is
standardized raw. The relative-error metric floors its denominator at 1.0
so zero-truth targets (DSP is frequently zero) stay well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from . import vocab
from .frontend import FeaturizedGraph, featurize
from .graph import from_json
from .models import GraphBatch, Model, ModelConfig, compute_pna_delta, prepare_batch
from .oracle import LabelVector, import_labels
from .seeding import derive_seed
from .tensor import AdamState, Tape, Tensor, adam_step

TARGETS = ("dsp", "lut", "ff", "slice", "cp")
RESOURCE_TARGETS = ("dsp", "lut", "ff", "slice")


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class GraphRecord:
    name: str
    fg: FeaturizedGraph
    labels: LabelVector | None
    num_nodes: int


def load_dataset(root: str | Path) -> list[GraphRecord]:
    """Read graphs/*.json plus labels.csv from a dataset directory."""
    root = Path(root)
    labels = {}
    if (root / "labels.csv").exists():
        labels = import_labels(root / "labels.csv")
    records = []
    for path in sorted((root / "graphs").glob("*.json")):
        g = from_json(path.read_text("utf-8"))
        records.append(GraphRecord(g.name, featurize(g), labels.get(g.name),
                                   g.num_nodes))
    if not records:
        raise FileNotFoundError(f"no graphs under {root}/graphs")
    return records


@dataclass
class DatasetSplits:
    train: list[GraphRecord]
    val: list[GraphRecord]
    test: list[GraphRecord]


def split(records: list[GraphRecord], ratios=(0.8, 0.1, 0.1),
          seed: int = 0) -> DatasetSplits:
    """Deterministic shuffled partition; sizes are exact up to rounding."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios {ratios} must sum to 1")
    if len(records) < 10:
        raise ValueError(f"need at least 10 graphs to split, got {len(records)}")
    import random

    order = list(range(len(records)))
    random.Random(seed).shuffle(order)
    n = len(records)
    counts = [int(math.floor(r * n)) for r in ratios]
    for i in range(n - sum(counts)):
        counts[i % 3] += 1
    shuffled = [records[i] for i in order]
    n_train, n_val = counts[0], counts[1]
    return DatasetSplits(shuffled[:n_train],
                         shuffled[n_train:n_train + n_val],
                         shuffled[n_train + n_val:])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-3
    weight_decay: float = 0.0
    dropout: float = 0.0
    batch_size: int = 32
    seed: int = 0
    target: str = "lut"
    label_transform: str | None = None   # None picks the per-target default

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.target not in TARGETS:
            raise ValueError(f"unknown target {self.target!r}")
        if self.label_transform not in (None, "standardize", "log1p_standardize"):
            raise ValueError(f"unknown transform {self.label_transform!r}")

    def resolved_transform(self) -> str:
        if self.label_transform is not None:
            return self.label_transform
        return "log1p_standardize" if self.target in RESOURCE_TARGETS else "standardize"

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "lr": self.lr,
            "weight_decay": self.weight_decay, "dropout": self.dropout,
            "batch_size": self.batch_size, "seed": self.seed,
            "target": self.target, "label_transform": self.resolved_transform(),
        }


@dataclass(frozen=True)
class LabelTransform:
    kind: str
    mu: float
    sigma: float

    @classmethod
    def fit(cls, kind: str, values: np.ndarray) -> "LabelTransform":
        v = np.asarray(values, dtype=np.float64)
        if kind == "log1p_standardize":
            v = np.log1p(v)
        return cls(kind, float(v.mean()), float(max(v.std(), 1e-8)))

    def apply(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        if self.kind == "log1p_standardize":
            v = np.log1p(v)
        return (v - self.mu) / self.sigma

    def invert(self, z: np.ndarray) -> np.ndarray:
        y = np.asarray(z, dtype=np.float64) * self.sigma + self.mu
        if self.kind == "log1p_standardize":
            y = np.expm1(y)
        return y


def relative_error(truth: float, pred: float) -> float:
    return abs(pred - truth) / max(abs(truth), 1.0)


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    split: str
    loss: float
    rel_err: float


@dataclass
class Metrics:
    target: str
    split: str
    mean_rel_err: float
    records: list[tuple[str, float, float]]   # (name, truth, prediction)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "split": self.split,
            "mean_rel_err": self.mean_rel_err,
            "records": [{"name": n, "truth": t, "prediction": p}
                        for n, t, p in self.records],
        }


@dataclass
class Checkpoint:
    model: Model
    opt_state: AdamState | None
    meta: dict

    def save(self, path: str | Path) -> None:
        T.save_checkpoint(path, self.model.params, self.opt_state, self.meta)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        params, opt_state, meta = T.load_checkpoint(path)
        if meta.get("vocab_hash") != vocab.vocab_hash():
            raise ValueError(f"{path}: checkpoint vocabulary does not match "
                             "the installed vocabulary file")
        cfg = ModelConfig.from_dict(meta["model_config"])
        return cls(Model(cfg, params, meta.get("delta", 1.0)), opt_state, meta)


def _label_values(records: list[GraphRecord], target: str) -> np.ndarray:
    missing = [r.name for r in records if r.labels is None]
    if missing:
        raise TrainingError(f"records without labels: {missing[:5]}"
                            + ("..." if len(missing) > 5 else ""))
    return np.array([r.labels[target] for r in records], dtype=np.float64)


def _make_batches(records: list[GraphRecord], mc: ModelConfig, batch_size: int,
                  train: bool, seed: int, target: str) -> list[tuple[GraphBatch, np.ndarray]]:
    """Fixed batches with operators prepared once; reused across epochs."""
    import random

    order = list(range(len(records)))
    if train:
        random.Random(derive_seed(seed, "batch-order")).shuffle(order)
    out = []
    for start in range(0, len(order), batch_size):
        chunk = [records[i] for i in order[start:start + batch_size]]
        y = _label_values(chunk, target)
        batch = prepare_batch([r.fg for r in chunk], mc, train=train,
                              seed=derive_seed(seed, "sage-sample", start))
        out.append((batch, y))
    return out


def _forward_errors(model: Model, batches, transform: LabelTransform,
                    target: str, readout_override: str | None = None):
    """Eval-mode predictions; returns (rel_errs, names, truths, preds, mse)."""
    rel, names, truths, preds = [], [], [], []
    mse_num, mse_den = 0.0, 0
    for batch, y in batches:
        out = model.forward(batch, train=False, readout_override=readout_override)
        z = out.data[:, 0].astype(np.float64)
        z_true = transform.apply(y)
        mse_num += float(((z - z_true) ** 2).sum())
        mse_den += len(y)
        pred = transform.invert(z)
        if target in RESOURCE_TARGETS:
            pred = np.maximum(pred, 0.0)
        for name, t, p in zip(batch.names, y, pred):
            rel.append(relative_error(t, p))
            names.append(name)
            truths.append(float(t))
            preds.append(float(p))
    return rel, names, truths, preds, mse_num / max(mse_den, 1)


def train(mc: ModelConfig, tc: TrainConfig,
          splits: DatasetSplits) -> tuple[Checkpoint, list[HistoryRow]]:
    """Train one target; retains the best-validation-error parameters.

    Batches are fixed after one seeded shuffle so their aggregation
    operators are built once; the training trajectory is bit-reproducible
    for a fixed (config, seed) on one thread.
    """
    mc = replace(mc, dropout=tc.dropout) if tc.dropout != mc.dropout else mc
    mc.validate()
    tc.validate()

    transform = LabelTransform.fit(tc.resolved_transform(),
                                   _label_values(splits.train, tc.target))
    delta = compute_pna_delta([r.fg for r in splits.train], mc)
    model = Model.init(mc, seed=derive_seed(tc.seed, "init"), delta=delta)

    train_batches = _make_batches(splits.train, mc, tc.batch_size, True,
                                  tc.seed, tc.target)
    val_batches = _make_batches(splits.val, mc, max(tc.batch_size, 64), False,
                                tc.seed, tc.target) if splits.val else []

    state = AdamState()
    history: list[HistoryRow] = []
    best_val = math.inf
    best_params: dict[str, np.ndarray] = {}
    best_state: AdamState | None = None
    best_epoch = -1

    z_targets = [Tensor(transform.apply(y)[:, None].astype(np.float32))
                 for _, y in train_batches]

    for epoch in range(tc.epochs):
        epoch_sq, epoch_n = 0.0, 0
        train_rel: list[float] = []
        for b_idx, (batch, y) in enumerate(train_batches):
            tape = Tape()
            with tape:
                out = model.forward(batch, train=True, dropout_seed=tc.seed,
                                    epoch=epoch, batch_index=b_idx)
                err = out - z_targets[b_idx]
                loss = T.square(err).mean()
            loss_val = loss.data.item()
            if not math.isfinite(loss_val):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {b_idx}")
            tape.backward(loss)
            grads = {k: p.grad for k, p in model.params.items()
                     if p.grad is not None}
            adam_step(model.params, grads, state, lr=tc.lr,
                      weight_decay=tc.weight_decay)
            for p in model.params.values():
                p.zero_grad()
            tape.clear()
            assert len(tape) == 0

            epoch_sq += loss_val * len(y)
            epoch_n += len(y)
            pred = transform.invert(out.data[:, 0].astype(np.float64))
            if tc.target in RESOURCE_TARGETS:
                pred = np.maximum(pred, 0.0)
            train_rel.extend(relative_error(t, p) for t, p in zip(y, pred))

        history.append(HistoryRow(epoch, "train", epoch_sq / max(epoch_n, 1),
                                  float(np.mean(train_rel))))
        if val_batches:
            rel, _, _, _, vloss = _forward_errors(model, val_batches, transform,
                                                  tc.target)
            vrel = float(np.mean(rel))
            history.append(HistoryRow(epoch, "val", vloss, vrel))
            if vrel < best_val:
                best_val = vrel
                best_epoch = epoch
                best_params = {k: p.data.copy() for k, p in model.params.items()}
                best_state = AdamState(state.step,
                                       {k: m.copy() for k, m in state.m.items()},
                                       {k: v.copy() for k, v in state.v.items()})

    if best_params:
        for k, p in model.params.items():
            p.data = best_params[k]
        state = best_state

    meta = {
        "model_config": mc.to_dict(),
        "train_config": tc.to_dict(),
        "target": tc.target,
        "transform": {"kind": transform.kind, "mu": transform.mu,
                      "sigma": transform.sigma},
        "delta": delta,
        "vocab_hash": vocab.vocab_hash(),
        "best_epoch": best_epoch,
        "best_val_rel_err": None if best_val is math.inf else best_val,
    }
    return Checkpoint(model, state, meta), history


def evaluate(ckpt: Checkpoint, records: list[GraphRecord], split_name: str = "test",
             batch_size: int = 64, readout_override: str | None = None) -> Metrics:
    """Relative errors of a checkpoint on labeled records, dropout off."""
    if not records:
        raise ValueError("nothing to evaluate")
    meta = ckpt.meta
    target = meta["target"]
    transform = LabelTransform(**meta["transform"])
    batches = _make_batches(records, ckpt.model.cfg, batch_size, False,
                            seed=0, target=target)
    rel, names, truths, preds, _ = _forward_errors(
        ckpt.model, batches, transform, target, readout_override)
    return Metrics(target, split_name, float(np.mean(rel)),
                   list(zip(names, truths, preds)))


@dataclass
class GapReport:
    target: str
    in_dist_err: float
    out_dist_err: float
    ratio: float
    records: list[dict]

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "in_dist_err": self.in_dist_err,
            "out_dist_err": self.out_dist_err,
            "ratio": self.ratio,
            "records": self.records,
        }


def generalization_eval(ckpt: Checkpoint, id_records: list[GraphRecord],
                        ood_records: list[GraphRecord],
                        readout_override: str | None = None
                        ) -> tuple[Metrics, GapReport]:
    """Error gap between the in-distribution split and a larger-graph set."""
    id_metrics = evaluate(ckpt, id_records, "in_dist",
                          readout_override=readout_override)
    ood_metrics = evaluate(ckpt, ood_records, "out_dist",
                           readout_override=readout_override)
    sizes = {r.name: r.num_nodes for r in ood_records}
    records = [
        {"name": n, "num_nodes": sizes[n], "truth": t, "prediction": p,
         "rel_err": relative_error(t, p)}
        for n, t, p in ood_metrics.records
    ]
    ratio = ood_metrics.mean_rel_err / max(id_metrics.mean_rel_err, 1e-12)
    return ood_metrics, GapReport(id_metrics.target, id_metrics.mean_rel_err,
                                  ood_metrics.mean_rel_err, ratio, records)


def multi_run_train(mc: ModelConfig, tc: TrainConfig, splits: DatasetSplits,
                    runs: int = 5, keep: int = 3):
    """Several seeded runs; the mean test error of the best-validation runs.

    Returns (summary dict, list of (checkpoint, history) per run).
    """
    if not (1 <= keep <= runs):
        raise ValueError("need 1 <= keep <= runs")
    outcomes = []
    for i in range(runs):
        tci = replace(tc, seed=derive_seed(tc.seed, "run", i))
        ckpt, history = train(mc, tci, splits)
        val_err = ckpt.meta["best_val_rel_err"]
        if val_err is None:
            val_err = evaluate(ckpt, splits.val or splits.train, "val").mean_rel_err
        outcomes.append((val_err, i, ckpt, history))
    ranked = sorted(outcomes, key=lambda o: (o[0], o[1]))[:keep]
    test_errs = [evaluate(c, splits.test, "test").mean_rel_err
                 for _, _, c, _ in ranked]
    summary = {
        "target": tc.target,
        "runs": runs,
        "keep": keep,
        "kept_runs": [i for _, i, _, _ in ranked],
        "kept_val_errors": [v for v, _, _, _ in ranked],
        "kept_test_errors": test_errs,
        "mean_test_rel_err": float(np.mean(test_errs)),
    }
    return summary, [(c, h) for _, _, c, h in outcomes]
