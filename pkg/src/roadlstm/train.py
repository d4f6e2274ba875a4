"""Loss, Adam, finite-difference gradient checks and the training loop."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .network import Network
from .pipeline import RoadSample, add_noise
from .tensor import ShapeError, Tensor3, make_rng


class TrainingError(RuntimeError):
    pass


def mae_loss(pred, target):
    """Mean absolute error and its (sub)gradient, with sign(0) = 0."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    n = diff.size
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params, grads) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError("params, grads and moment buffers differ in length")
    offset = 0
    for g in grads:
        bad = np.flatnonzero(~np.isfinite(g))
        if bad.size:
            raise TrainingError(f"non-finite gradient at parameter index {offset + int(bad[0])}")
        offset += g.size
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --------------------------------------------------------------------------
# gradient checking

def _loss(net, x, target):
    return mae_loss(net.forward(x), target)[0]


def grad_check_layers(net: Network, x, target, eps: float = 1e-5, corrupt: str | None = None,
                      corrupt_scale: float = 2.0) -> dict[str, float]:
    """Worst relative error per parameter array, analytic vs central differences.

    ``corrupt`` names a parameter array (as in ``net.param_names()``) whose
    analytic gradient is scaled by ``corrupt_scale`` before comparison.
    """
    out, caches = net.forward(x, train=True)
    _, g = mae_loss(out, target)
    analytic = net.backward(caches, g)
    report = {}
    for name, p, a in zip(net.param_names(), net.params(), analytic):
        if name == corrupt:
            a = a * corrupt_scale
        worst = 0.0
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            fp = _loss(net, x, target)
            p[idx] = old - eps
            fm = _loss(net, x, target)
            p[idx] = old
            num = (fp - fm) / (2 * eps)
            ai = a[idx]
            err = abs(ai - num) / max(abs(ai), abs(num), 1e-8)
            worst = max(worst, err)
        report[name] = worst
    return report


def grad_check(net: Network, x, target, eps: float = 1e-5, **kw) -> float:
    """Max relative error ``|a - n| / max(|a|, |n|, 1e-8)`` over every parameter."""
    return max(grad_check_layers(net, x, target, eps, **kw).values(), default=0.0)


# --------------------------------------------------------------------------
# training loop

@dataclass
class TrainConfig:
    batch_size: int = 100
    epochs: int = 80
    lr: float = 1e-5
    noise_sd: float = 0.0002
    seed: int = 0

    def validate(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.lr < 0 or self.noise_sd < 0:
            raise ValueError("lr and noise_sd must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    val_mae: float | None
    wall_seconds: float


def evaluate_mae(net: Network, samples) -> float | None:
    if not samples:
        return None
    return float(np.mean([mae_loss(net.forward(s.input), s.target)[0] for s in samples]))


def train(net: Network, dataset: list[RoadSample], cfg: TrainConfig,
          val: list[RoadSample] | None = None, on_epoch=None) -> list[EpochRecord]:
    """Minibatch Adam on mean absolute error.

    Train MAE of an epoch is the mean per-sample loss seen during that epoch
    (noisy inputs, parameters as they were when each batch started).
    ``on_epoch(record)`` runs after each epoch; returning True ends training.
    """
    cfg.validate()
    if not dataset:
        raise TrainingError("empty training set")
    rng = make_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    params = net.params()
    history = []
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        losses = []
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[lo:lo + cfg.batch_size]
            acc = [np.zeros_like(p) for p in params]
            for i in batch:
                s = add_noise(dataset[i], cfg.noise_sd, rng) if cfg.noise_sd > 0 else dataset[i]
                out, caches = net.forward(s.input, train=True)
                loss, g = mae_loss(out, s.target)
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                losses.append(loss)
                for a, gr in zip(acc, net.backward(caches, g)):
                    a += gr
            for a in acc:
                a /= len(batch)
            try:
                adam_step(state, params, acc)
            except TrainingError as e:
                raise TrainingError(f"epoch {epoch}, batch {b}: {e}") from None
        rec = EpochRecord(epoch, float(np.mean(losses)), evaluate_mae(net, val or []),
                          time.perf_counter() - start)
        history.append(rec)
        if on_epoch is not None and on_epoch(rec):
            break
    return history


def write_log(history: list[EpochRecord], path, timing: bool = True) -> None:
    """CSV with columns epoch, train_mae, val_mae, wall_seconds.

    With ``timing=False`` the wall-clock column is left empty so that runs are
    byte-comparable.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_mae", "val_mae", "wall_seconds"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_mae), "" if r.val_mae is None else repr(r.val_mae),
                        f"{r.wall_seconds:.3f}" if timing else ""])


def read_log(path) -> list[EpochRecord]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [EpochRecord(int(r["epoch"]), float(r["train_mae"]),
                        float(r["val_mae"]) if r["val_mae"] else None,
                        float(r["wall_seconds"]) if r["wall_seconds"] else float("nan"))
            for r in rows]
