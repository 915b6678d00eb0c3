"""Minibatch Adam training of the (continued) unrolled decoder.

The stopping signal is the gap between the validation and training losses;
the reported generalisation error is the gap between test and training
losses.  The returned operator is the one with the smallest stopping signal
among the trained epochs.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .continuation import continued_backward, continued_decoder
from .errors import DivergenceError, InvalidArgument, TrainingError
from .ops import get_loss

log = logging.getLogger(__name__)

EVAL_CHUNK = 1024


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, W, **kwargs):
        return cls(np.zeros_like(W), np.zeros_like(W), **kwargs)


def adam_step(W, grad, state, lr):
    """Bias-corrected Adam update; returns ``(W_new, state_new)`` without touching the inputs."""
    if np.shape(grad) != np.shape(W) or state.m.shape != np.shape(W):
        raise InvalidArgument("W, gradient and Adam moments must share a shape")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    W_new = W - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return W_new, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    max_epochs: int = 100
    early_stop_patience: int = 10
    loss: str = "logcosh"
    J: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise InvalidArgument("learning_rate must be positive")
        if self.max_epochs < 0 or self.early_stop_patience < 1:
            raise InvalidArgument("max_epochs must be >= 0 and patience >= 1")
        if self.J < 1:
            raise InvalidArgument("J must be at least 1")
        get_loss(self.loss)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    test_loss: float
    ege: float

    @property
    def stop_signal(self):
        return abs(self.val_loss - self.train_loss)


@dataclass
class Metrics:
    train_loss: float
    test_loss: float
    ege: float
    val_loss: float = float("nan")
    best_epoch: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class Splits:
    train: object
    val: object
    test: object


def predict(decoder, data, J, A):
    """Reconstructions for every sample of ``data`` (no tape kept)."""
    if len(data) == 0:
        raise InvalidArgument("empty split")
    parts = []
    for start in range(0, len(data), EVAL_CHUNK):
        sl = slice(start, start + EVAL_CHUNK)
        xhat, _ = continued_decoder(decoder, data.y[sl], data.x0[sl], A, data.eps[sl], J)
        parts.append(np.atleast_2d(xhat))
    return np.vstack(parts)


def split_loss(decoder, data, J, A, loss="logcosh"):
    loss_fn, _ = get_loss(loss)
    return loss_fn(predict(decoder, data, J, A), data.x)


def evaluate(decoder, split, A, J=1, loss="logcosh", train_split=None):
    """Loss on ``split``; with ``train_split`` also the train loss and their gap."""
    test = split_loss(decoder, split, J, A, loss)
    if train_split is None:
        return Metrics(train_loss=float("nan"), test_loss=test, ege=float("nan"))
    train = split_loss(decoder, train_split, J, A, loss)
    return Metrics(train_loss=train, test_loss=test, ege=abs(test - train))


def _epoch_record(decoder, splits, A, config, epoch):
    try:
        losses = [split_loss(decoder, s, config.J, A, config.loss)
                  for s in (splits.train, splits.val, splits.test)]
    except DivergenceError as err:
        raise TrainingError(f"evaluation diverged: {err}", epoch=epoch) from None
    if not np.all(np.isfinite(losses)):
        raise TrainingError("loss is not finite", epoch=epoch)
    train, val, test = losses
    return EpochRecord(epoch, train, val, test, abs(test - train))


def train(splits, decoder, A, config, progress=None):
    """Train ``decoder.W``; returns ``(best decoder, Metrics)``.

    Epoch 0 in the history is the untrained operator.  Training stops once
    the stopping signal has not improved for ``early_stop_patience`` epochs.
    """
    if len(splits.train) == 0 or len(splits.val) == 0 or len(splits.test) == 0:
        raise InvalidArgument("train, validation and test splits must be non-empty")
    if splits.train.n != decoder.n or splits.train.m != decoder.m:
        raise InvalidArgument("data dimensions do not match the decoder")
    _, loss_grad = get_loss(config.loss)
    rng = np.random.default_rng(config.seed)

    history = [_epoch_record(decoder, splits, A, config, 0)]
    best, best_decoder, stale = None, decoder, 0
    W = decoder.W
    adam = AdamState.like(W, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    data = splits.train
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(data))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            current = decoder.with_W(W)
            try:
                xhat, tape = continued_decoder(current, data.y[idx], data.x0[idx], A,
                                               data.eps[idx], config.J, keep_tape=True)
            except DivergenceError as err:
                raise TrainingError(f"forward pass diverged: {err}", epoch=epoch) from None
            grad = continued_backward(current, tape, loss_grad(xhat, data.x[idx]))
            if not np.all(np.isfinite(grad)):
                raise TrainingError("gradient is not finite", epoch=epoch)
            W, adam = adam_step(W, grad, adam, config.learning_rate)
        current = decoder.with_W(W)
        record = _epoch_record(current, splits, A, config, epoch)
        history.append(record)
        log.info("epoch %d train %.6f val %.6f test %.6f", epoch, record.train_loss,
                 record.val_loss, record.test_loss)
        if progress is not None:
            progress(record)
        if best is None or record.stop_signal < best.stop_signal:
            best, best_decoder, stale = record, current, 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    if best is None:
        best = history[0]
    metrics = Metrics(train_loss=best.train_loss, test_loss=best.test_loss, ege=best.ege,
                      val_loss=best.val_loss, best_epoch=best.epoch, history=history)
    return best_decoder, metrics


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "test_loss", "ege"])
        for r in history:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.test_loss), repr(r.ege)])


def run_matrix(grid, seeds, run_cell):
    """Run ``run_cell(cell, seed) -> Metrics`` over the product of ``grid`` and ``seeds``.

    ``grid`` maps a parameter name to its values.  Returns one row per cell
    with seed-averaged metrics; failed seeds are counted and skipped.
    """
    import itertools

    if not grid or not seeds:
        raise InvalidArgument("grid and seeds must be non-empty")
    keys = list(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        cell = dict(zip(keys, values))
        results, failures = [], []
        for seed in seeds:
            try:
                results.append(run_cell(cell, seed))
            except Exception as err:  # noqa: BLE001 - a failed cell must not stop the grid
                log.warning("cell %s seed %s failed: %s", cell, seed, err)
                failures.append(f"seed {seed}: {err}")
        row = dict(cell)
        row["seeds"] = len(results)
        row["failures"] = len(failures)
        for name in ("train_loss", "test_loss", "ege"):
            vals = [getattr(r, name) for r in results]
            row[name] = float(np.mean(vals)) if vals else float("nan")
        row["errors"] = "; ".join(failures)
        rows.append(row)
    return rows
