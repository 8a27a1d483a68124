"""Optimisation loop: Adam, plateau learning-rate halving, early stopping, metrics."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import tensor as T
from .exceptions import EmptyDataset, EmptySplit, NonFinite
from .model import CinModel, ComplexBatch

log = logging.getLogger(__name__)

TASKS = {
    "regression": "mae",
    "binary": "ap",
    "multilabel": "ap",
}


@dataclass
class TrainConfig:
    lr: float = 1e-3
    plateau_patience: int = 20
    lr_halve_factor: float = 0.5
    early_stop_lr: float = 1e-5
    plateau_threshold: float = 1e-4
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 200
    seed: int = 0
    task: str = "regression"

    def __post_init__(self):
        if not self.lr > self.early_stop_lr > 0:
            raise ValueError("need lr > early_stop_lr > 0")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {sorted(TASKS)}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# presets for the two benchmark families the protocol was reported on
PRESETS = {
    "zinc": dict(model=dict(layers=3, hidden=64, readout="sum"), train=dict(lr=1e-3)),
    "peptides-func": dict(
        model=dict(layers=4, hidden=50, dropout=0.15, readout="mean"),
        train=dict(lr=4e-4, weight_decay=5e-5, task="multilabel"),
    ),
}


@dataclass
class TrainState:
    lr: float
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    best_metric: Optional[float] = None
    best_epoch: Optional[int] = None
    plateau_best: float = math.inf
    plateau_bad: int = 0


def adam_step(state: TrainState, params: dict, lr: float, betas=(0.9, 0.999),
              eps: float = 1e-8, weight_decay: float = 0.0):
    """Bias-corrected Adam with decoupled weight decay (``p -= lr*wd*p`` first).

    Parameters without a gradient are treated as having a zero gradient.
    """
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(g)):
            raise NonFinite(f"non-finite gradient for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def schedule_on_plateau(state: TrainState, val_loss: float, config: TrainConfig) -> float:
    """Halve the learning rate after ``patience`` epochs without relative improvement."""
    best = state.plateau_best
    improved = not math.isfinite(best) or val_loss < best - config.plateau_threshold * abs(best)
    if improved:
        state.plateau_best = val_loss
        state.plateau_bad = 0
    else:
        state.plateau_bad += 1
        if state.plateau_bad >= config.plateau_patience:
            state.lr *= config.lr_halve_factor
            state.plateau_bad = 0
    return state.lr


# -- metrics -------------------------------------------------------------------

def mean_absolute_error(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true, float), np.asarray(y_pred, float)
    if y_true.size == 0:
        raise EmptyDataset("no samples to score")
    return float(np.mean(np.abs(y_true - y_pred)))


def average_precision(y_true, scores) -> float:
    """Step-interpolated area under the precision-recall curve (one label)."""
    y = np.asarray(y_true, float).ravel()
    s = np.asarray(scores, float).ravel()
    if y.size == 0:
        raise EmptyDataset("no samples to score")
    n_pos = y.sum()
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    last = np.r_[np.flatnonzero(np.diff(s)), y.size - 1]  # last index of each distinct score
    tp = tp[last]
    precision = tp / (last + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney rank statistic with mid-ranks for ties."""
    y = np.asarray(y_true, float).ravel()
    s = np.asarray(scores, float).ravel()
    if y.size == 0:
        raise EmptyDataset("no samples to score")
    n_pos = y.sum()
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def score(task: str, y_true, y_pred) -> dict:
    y_true = np.asarray(y_true, float)
    y_pred = np.asarray(y_pred, float)
    if task == "regression":
        return {"mae": mean_absolute_error(y_true, y_pred)}
    y_true = y_true.reshape(len(y_true), -1)
    y_pred = y_pred.reshape(len(y_pred), -1)
    aps = [average_precision(y_true[:, j], y_pred[:, j]) for j in range(y_true.shape[1])]
    aucs = [roc_auc(y_true[:, j], y_pred[:, j]) for j in range(y_true.shape[1])]
    return {"ap": float(np.nanmean(aps)), "roc_auc": float(np.nanmean(aucs))}


def loss_fn(task: str, out: T.Tensor, y: np.ndarray) -> T.Tensor:
    if task == "regression":
        return T.mean_all(T.absolute(T.sub(out, T.Tensor(y))))
    return T.bce_with_logits(out, y)


def predict(model: CinModel, complexes: Sequence, batch_size: int = 256) -> np.ndarray:
    prev = model.training
    model.eval()
    outs = []
    try:
        with T.no_grad():
            for i in range(0, len(complexes), batch_size):
                outs.append(model.forward(ComplexBatch(complexes[i:i + batch_size])).data)
    finally:
        model.training = prev
    return np.vstack(outs)


def evaluate(model: CinModel, complexes: Sequence, targets, task: str = "regression") -> dict:
    """Metrics in eval mode.  Classification scores are the raw logits."""
    if len(complexes) == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    pred = predict(model, complexes)
    y = np.asarray(targets, float).reshape(pred.shape)
    out = score(task, y, pred)
    with T.no_grad():
        out["loss"] = float(loss_fn(task, T.Tensor(pred), y).data)
    return out


# -- training --------------------------------------------------------------------

@dataclass
class TrainReport:
    history: list
    best_epoch: int
    best_val_metric: float
    test_metrics: dict
    stop_reason: str
    config: dict
    wall_time: float = 0.0

    @property
    def lr_trace(self) -> list:
        return [h["lr"] for h in self.history]

    @property
    def val_losses(self) -> list:
        return [h["val_loss"] for h in self.history]

    def to_dict(self) -> dict:
        return asdict(self)


def _split(data, name):
    complexes, targets = data
    complexes = list(complexes)
    if not complexes:
        raise EmptySplit(f"split {name!r} is empty")
    y = np.asarray(targets, float).reshape(len(complexes), -1)
    return complexes, y


def snapshot(model: CinModel) -> dict:
    state = {n: p.data.copy() for n, p in model.parameters().items()}
    state.update({n: b.copy() for n, b in model.buffers().items()})
    return state


def restore(model: CinModel, state: dict):
    for n, p in model.parameters().items():
        p.data[...] = state[n]
    for n, b in model.buffers().items():
        b[...] = state[n]


def train_loop(
    model: CinModel,
    datasets: dict,
    config: TrainConfig,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainReport:
    """Train until the learning rate drops to ``early_stop_lr`` or ``max_epochs``.

    ``datasets`` maps ``train``/``val`` and optionally ``test`` to
    ``(complexes, targets)``.
    The best-validation weights are restored before scoring the test split.
    """
    start = time.perf_counter()
    train_x, train_y = _split(datasets["train"], "train")
    val_x, val_y = _split(datasets["val"], "val")
    has_test = datasets.get("test") is not None
    test_x, test_y = _split(datasets["test"], "test") if has_test else ([], None)
    ids = [set(map(id, xs)) for xs in (train_x, val_x, test_x)]
    if ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2]:
        raise EmptySplit("train/val/test splits share complexes")

    task = config.task
    metric = TASKS[task]
    higher_better = metric != "mae"
    params = model.parameters()
    state = TrainState(lr=config.lr)
    history = []
    best = None
    stop = "max_epochs"
    n = len(train_x)

    for epoch in range(config.max_epochs):
        model.train()
        order = T.make_rng(config.seed, "shuffle", epoch).permutation(n)
        total = 0.0
        lr = state.lr
        for bi, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            batch = ComplexBatch([train_x[i] for i in idx])
            drop_rng = T.make_rng(config.seed, "dropout", epoch * 1_000_003 + bi)
            out = model.forward(batch, rng=drop_rng)
            loss = loss_fn(task, out, train_y[idx])
            for p in params.values():
                p.grad = None
            T.backward(loss)
            adam_step(state, params, lr, config.betas, config.adam_eps, config.weight_decay)
            total += float(loss.data) * len(idx)

        val = evaluate(model, val_x, val_y, task)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": total / n,
            "val_loss": val["loss"],
            "val_metric": val[metric],
        }
        value = val[metric]
        if best is None or (value > best if higher_better else value < best):
            best = value
            state.best_metric, state.best_epoch = value, epoch
            best_weights = snapshot(model)
        new_lr = schedule_on_plateau(state, val["loss"], config)
        record["next_lr"] = new_lr
        history.append(record)
        log.info("epoch %d lr %.2e train %.4f val %.4f", epoch, lr, record["train_loss"], value)
        if on_epoch is not None:
            on_epoch(record)
        if new_lr <= config.early_stop_lr:
            stop = "early_stop_lr"
            break

    restore(model, best_weights)
    test = evaluate(model, test_x, test_y, task) if has_test else {}
    return TrainReport(
        history=history,
        best_epoch=state.best_epoch,
        best_val_metric=state.best_metric,
        test_metrics=test,
        stop_reason=stop,
        config=config.to_dict(),
        wall_time=time.perf_counter() - start,
    )
