"""Supervised training of the profitability models.

Datasets come from autotuner trial logs: rows from trials that caused a
slowdown (speedup below the floor) are pruned, each region is labeled with
the choice from its highest-speedup surviving trial, and duplicate feature
vectors are collapsed keeping the label backed by the best trial.

The classifier is a feedforward net (hidden widths 32/128/256/64, ReLU,
softmax) trained with plain mini-batch SGD at a fixed learning rate, seeded
shuffling included, so runs are bit-reproducible. Prediction goes through the
same reference kernel the server uses, which makes export/load round trips
prediction-identical rather than merely close.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autotune import INLINE_DOMAIN, UNROLL_CLASSES, LogRow
from .features import SCHEMAS, FeatureVector
from .mlp import argmax, forward_logits, standardize
from .server import ModelSpec, write_spec, write_weights

HIDDEN_WIDTHS = (32, 128, 256, 64)
OUTPUTS = {"LU": (("LU-Type", "int"), ("LU-Count", "int")),
           "FI": (("FI-ShouldInline", "bool"),)}
CLASS_SETS = {"LU": UNROLL_CLASSES, "FI": INLINE_DOMAIN}


class TrainError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 8
    learning_rate: float = 0.01
    seed: int = 0
    speedup_floor: float = 1.0
    hidden: tuple[int, ...] = HIDDEN_WIDTHS
    class_weighting: bool = False

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise TrainError("epochs, batch_size and learning_rate must be positive")


@dataclass
class TrainingSample:
    features: FeatureVector
    label: int                         # class index
    weight: float
    source: tuple                      # (program, iteration, region_id)
    speedup: float


def build_dataset(rows: list[LogRow], kind: str,
                  config: Optional[TrainConfig] = None) -> list[TrainingSample]:
    """Prune slowdowns, label each region by its best trial, deduplicate."""
    config = config or TrainConfig()
    classes = CLASS_SETS[kind]
    surviving = [r for r in rows
                 if r.kind == kind and r.speedup >= config.speedup_floor]
    if not surviving:
        raise TrainError(f"empty {kind} dataset after pruning at floor "
                         f"{config.speedup_floor}")
    best: dict[tuple, LogRow] = {}
    for row in surviving:
        key = (row.program, row.region_id)
        cur = best.get(key)
        if cur is None or (row.speedup, -row.iteration) > (cur.speedup, -cur.iteration):
            best[key] = row
    deduped: dict[str, LogRow] = {}
    for row in best.values():
        fingerprint = row.features.canonical()
        cur = deduped.get(fingerprint)
        if cur is None or (row.speedup, -row.iteration, cur.program) > \
                (cur.speedup, -cur.iteration, row.program):
            deduped[fingerprint] = row
    samples = []
    for row in sorted(deduped.values(), key=lambda r: (r.program, r.region_id)):
        if row.choice not in classes:
            raise TrainError(f"choice {row.choice} outside the {kind} class set")
        samples.append(TrainingSample(
            features=row.features, label=classes.index(row.choice), weight=1.0,
            source=(row.program, row.iteration, row.region_id),
            speedup=row.speedup))
    if config.class_weighting:
        counts: dict[int, int] = {}
        for s in samples:
            counts[s.label] = counts.get(s.label, 0) + 1
        for s in samples:
            s.weight = len(samples) / (len(counts) * counts[s.label])
    return samples


# ---------------------------------------------------------------------------
# the classifier


class MlpClassifier:
    """Feedforward softmax classifier with a fit/predict surface.

    Training math is vectorized numpy; canonical predictions go through the
    reference kernel so they match the serving path exactly.
    """

    def __init__(self, n_classes: int, hidden: tuple[int, ...] = HIDDEN_WIDTHS,
                 epochs: int = 300, batch_size: int = 8,
                 learning_rate: float = 0.01, seed: int = 0):
        self.n_classes = n_classes
        self.hidden = tuple(hidden)
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y, sample_weight=None) -> "MlpClassifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y):
            raise TrainError("X must be 2-D with one label per row")
        if len(np.unique(y)) < 2:
            raise TrainError("training needs at least 2 distinct classes")
        w = np.ones(len(y)) if sample_weight is None else \
            np.asarray(sample_weight, dtype=np.float64)

        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0.0] = 1.0
        self.std_ = std
        Xs = (X - self.mean_) / self.std_

        rng = np.random.default_rng(self.seed)
        dims = [X.shape[1], *self.hidden, self.n_classes]
        self.W_ = []
        self.b_ = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.W_.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.b_.append(np.zeros(fan_out))

        self.loss_curve_ = []
        self.train_top1_ = []
        n = len(Xs)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                self._sgd_step(Xs[idx], y[idx], w[idx])
            loss, top1 = self._epoch_metrics(Xs, y, w)
            if not math.isfinite(loss):
                raise TrainError("training diverged (non-finite loss)")
            self.loss_curve_.append(loss)
            self.train_top1_.append(top1)
        return self

    def _forward_np(self, W, b, X):
        acts = [X]
        for i, (Wi, bi) in enumerate(zip(W, b)):
            z = acts[-1] @ Wi.T + bi
            acts.append(np.maximum(z, 0.0) if i < len(W) - 1 else z)
        return acts

    def _sgd_step(self, Xb, yb, wb) -> None:
        grads_W, grads_b = self._gradients(self.W_, self.b_, Xb, yb, wb)
        for Wi, bi, gW, gb in zip(self.W_, self.b_, grads_W, grads_b):
            Wi -= self.learning_rate * gW
            bi -= self.learning_rate * gb

    @staticmethod
    def _gradients(W, b, Xb, yb, wb):
        acts = []
        a = Xb
        acts.append(a)
        zs = []
        for i, (Wi, bi) in enumerate(zip(W, b)):
            z = a @ Wi.T + bi
            zs.append(z)
            a = np.maximum(z, 0.0) if i < len(W) - 1 else z
            acts.append(a)
        logits = acts[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        total_w = wb.sum()
        delta = probs.copy()
        delta[np.arange(len(yb)), yb] -= 1.0
        delta *= (wb / total_w)[:, None]
        grads_W, grads_b = [], []
        for i in range(len(W) - 1, -1, -1):
            grads_W.append(delta.T @ acts[i])
            grads_b.append(delta.sum(axis=0))
            if i > 0:
                delta = (delta @ W[i]) * (zs[i - 1] > 0.0)
        return grads_W[::-1], grads_b[::-1]

    def _epoch_metrics(self, Xs, y, w):
        logits = self._forward_np(self.W_, self.b_, Xs)[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        nll = -log_probs[np.arange(len(y)), y]
        loss = float((nll * w).sum() / w.sum())
        top1 = float((logits.argmax(axis=1) == y).mean())
        return loss, top1

    # -- canonical (serving-path) predictions ---------------------------

    def layers_py(self) -> list:
        """Weights as plain Python lists, the serving/export form."""
        return [( [[float(v) for v in row] for row in Wi.tolist()],
                  [float(v) for v in bi.tolist()])
                for Wi, bi in zip(self.W_, self.b_)]

    def decision_logits(self, x_raw) -> list[float]:
        xs = standardize([float(v) for v in x_raw],
                         [float(v) for v in self.mean_],
                         [float(v) for v in self.std_])
        return forward_logits(self.layers_py(), xs)

    def predict(self, X) -> list[int]:
        return [argmax(self.decision_logits(row)) for row in X]

    def predict_proba(self, X) -> list[list[float]]:
        from .mlp import softmax
        return [softmax(self.decision_logits(row)) for row in X]


@dataclass
class TrainReport:
    kind: str
    seed: int
    n_samples: int
    label_histogram: dict
    loss_curve: list
    train_top1: list
    config: dict

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def train(samples: list[TrainingSample], kind: str,
          config: Optional[TrainConfig] = None) -> tuple[MlpClassifier, TrainReport]:
    """Train the Table-style net on a dataset; deterministic given the seed."""
    config = config or TrainConfig()
    if not samples:
        raise TrainError("no samples")
    X = [s.features.numbers() for s in samples]
    y = [s.label for s in samples]
    w = [s.weight for s in samples]
    clf = MlpClassifier(n_classes=len(CLASS_SETS[kind]), hidden=config.hidden,
                        epochs=config.epochs, batch_size=config.batch_size,
                        learning_rate=config.learning_rate, seed=config.seed)
    clf.fit(X, y, sample_weight=w)
    histogram: dict[int, int] = {}
    for label in y:
        histogram[label] = histogram.get(label, 0) + 1
    report = TrainReport(
        kind=kind, seed=config.seed, n_samples=len(samples),
        label_histogram={str(CLASS_SETS[kind][k]): v
                         for k, v in sorted(histogram.items())},
        loss_curve=clf.loss_curve_, train_top1=clf.train_top1_,
        config={"epochs": config.epochs, "batch_size": config.batch_size,
                "learning_rate": config.learning_rate,
                "speedup_floor": config.speedup_floor,
                "hidden": list(config.hidden)})
    return clf, report


# ---------------------------------------------------------------------------
# export


def export_model(clf: MlpClassifier, kind: str, out_dir: str) -> str:
    """Write model-<kind>.acpo plus weights; returns the spec path."""
    os.makedirs(out_dir, exist_ok=True)
    stem = f"model-{kind.lower()}"
    spec = ModelSpec(
        name=kind, schema_version=1, features=SCHEMAS[kind],
        outputs=OUTPUTS[kind], classes=tuple(CLASS_SETS[kind]),
        mean=tuple(float(v) for v in clf.mean_),
        std=tuple(float(v) for v in clf.std_),
        weights_path=f"{stem}.weights")
    write_weights(os.path.join(out_dir, f"{stem}.weights"), clf.layers_py())
    spec_path = os.path.join(out_dir, f"{stem}.acpo")
    write_spec(spec_path, spec)
    return spec_path


# ---------------------------------------------------------------------------
# gradient check


def gradient_check(layers_np: tuple, x, y: int, h: float = 1e-4,
                   nudge: float = 0.1) -> float:
    """Analytic vs central-difference gradients; returns max relative error.

    Biases are first adjusted so no pre-activation sits within `nudge` of the
    ReLU kink, keeping the h-ball smooth.
    """
    W = [Wi.copy() for Wi in layers_np[0]]
    b = [bi.copy() for bi in layers_np[1]]
    x = np.asarray(x, dtype=np.float64)
    _nudge_preactivations(W, b, x, nudge)

    wb = np.ones(1)
    yb = np.asarray([y])
    Xb = x[None, :]
    grads_W, grads_b = MlpClassifier._gradients(W, b, Xb, yb, wb)

    worst = 0.0
    for i in range(len(W)):
        for arr, grad in ((W[i], grads_W[i]), (b[i], grads_b[i])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                keep = arr[idx]
                arr[idx] = keep + h
                up = _loss(W, b, Xb, yb)
                arr[idx] = keep - h
                down = _loss(W, b, Xb, yb)
                arr[idx] = keep
                numeric = (up - down) / (2 * h)
                analytic = grad[idx]
                scale = max(1.0, abs(numeric), abs(analytic))
                worst = max(worst, abs(numeric - analytic) / scale)
    return worst


def _loss(W, b, Xb, yb) -> float:
    a = Xb
    for i, (Wi, bi) in enumerate(zip(W, b)):
        z = a @ Wi.T + bi
        a = np.maximum(z, 0.0) if i < len(W) - 1 else z
    shifted = a - a.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[0, yb[0]])


def _nudge_preactivations(W, b, x, margin: float) -> None:
    a = x[None, :]
    for i in range(len(W) - 1):
        z = a @ W[i].T + b[i]
        close = np.abs(z[0]) < margin
        adjust = np.where(z[0] >= 0.0, margin - z[0], -margin - z[0])
        b[i][close] += adjust[close]
        z = a @ W[i].T + b[i]
        a = np.maximum(z, 0.0)


# ---------------------------------------------------------------------------
# leave-one-out cross-validation


@dataclass
class LoocvReport:
    kind: str
    rows: list = field(default_factory=list)   # (program, n_test, top1)
    geomean: float = 0.0

    def render(self) -> str:
        out = [f"{'program':<20} {'samples':>8} {'top1':>8}"]
        for program, n, top1 in self.rows:
            out.append(f"{program:<20} {n:>8} {top1:>8.3f}")
        out.append(f"{'geomean':<20} {'':>8} {self.geomean:>8.3f}")
        return "\n".join(out) + "\n"


def loocv(rows: list[LogRow], kind: str,
          config: Optional[TrainConfig] = None) -> LoocvReport:
    """Hold out one program at a time; train on the rest; report top-1."""
    config = config or TrainConfig()
    programs = sorted({r.program for r in rows if r.kind == kind})
    if len(programs) < 2:
        raise TrainError("leave-one-out needs at least 2 programs")
    report = LoocvReport(kind=kind)
    accs = []
    for held_out in programs:
        train_rows = [r for r in rows if r.program != held_out]
        test_rows = [r for r in rows if r.program == held_out]
        train_samples = build_dataset(train_rows, kind, config)
        test_samples = build_dataset(test_rows, kind, config)
        for s in train_samples:
            if s.source[0] == held_out:
                raise TrainError("fold leakage: held-out program in training fold")
        clf, _ = train(train_samples, kind, config)
        predictions = clf.predict([s.features.numbers() for s in test_samples])
        hits = sum(1 for p, s in zip(predictions, test_samples) if p == s.label)
        top1 = hits / len(test_samples)
        accs.append(top1)
        report.rows.append((held_out, len(test_samples), top1))
    report.geomean = math.prod(accs) ** (1.0 / len(accs)) if all(accs) else 0.0
    return report
