"""Pointwise operators and losses shared by the solver, the decoder and training.

All thresholds accept a scalar or an array that broadcasts against ``x``
(per-sample thresholds are passed with shape ``(batch, 1)``).  ``sign(0)``
is taken to be 0 everywhere.
"""
import math

import numpy as np

from .errors import InvalidArgument

LOG2 = math.log(2.0)


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0) or not np.all(np.isfinite(tau)):
        raise InvalidArgument("threshold must be finite and nonnegative")
    return tau


def soft_threshold(x, tau):
    """Componentwise shrinkage ``sign(x) * max(0, |x| - tau)``."""
    return _soft(np.asarray(x, dtype=float), _check_tau(tau))


def _soft(x, tau):
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def truncate(x, tau):
    """Componentwise clamp to ``[-tau, tau]``."""
    tau = _check_tau(tau)
    return np.clip(np.asarray(x, dtype=float), -tau, tau)


def block_shrink(v, tau):
    """Shrink each vector along the last axis towards 0 by ``tau`` in l2 norm.

    This is the prox of ``tau * ||.||_2`` applied row by row:
    ``max(0, 1 - tau / ||v||) * v``.
    """
    return _block(np.asarray(v, dtype=float), _check_tau(tau))


def _block(v, tau):
    norm = np.sqrt(np.einsum("...i,...i->...", v, v))[..., None]
    active = norm > tau
    scale = np.zeros_like(norm)
    np.subtract(1.0, np.divide(tau, norm, out=np.ones_like(norm), where=active), out=scale, where=active)
    return scale * v


def theta_next(theta):
    """One step of the decreasing step-size recursion, ``2 / (1 + sqrt(1 + 4/theta^2))``."""
    if not 0.0 < theta <= 1.0:
        raise InvalidArgument(f"theta must lie in (0, 1], got {theta!r}")
    return 2.0 / (1.0 + math.sqrt(1.0 + 4.0 / (theta * theta)))


def theta_schedule(length):
    """The first ``length`` values of the recursion started from 1."""
    thetas = [1.0]
    while len(thetas) < length:
        thetas.append(theta_next(thetas[-1]))
    return thetas[:length]


def log_cosh(t):
    """Elementwise ``log(cosh(t))`` without overflow.

    Large arguments use ``|t| + log1p(exp(-2|t|)) - log 2``; below 1 that form
    cancels badly, so ``log1p(2 sinh^2(t/2))`` is used instead.
    """
    t = np.abs(np.asarray(t, dtype=float))
    small = t < 1.0
    with np.errstate(over="ignore"):
        near = np.log1p(2.0 * np.sinh(0.5 * np.where(small, t, 0.0)) ** 2)
    far = t + np.log1p(np.exp(-2.0 * t)) - LOG2
    return np.where(small, near, far)


def _check_pair(predictions, targets):
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape:
        raise InvalidArgument(
            f"prediction shape {predictions.shape} does not match target shape {targets.shape}"
        )
    if predictions.size == 0:
        raise InvalidArgument("empty batch")
    if predictions.ndim == 1:
        predictions, targets = predictions[None, :], targets[None, :]
    return predictions, targets


def log_cosh_loss(predictions, targets):
    """Sum of log-cosh residuals over components, averaged over samples."""
    predictions, targets = _check_pair(predictions, targets)
    return float(log_cosh(predictions - targets).sum(axis=1).mean())


def log_cosh_grad(predictions, targets):
    """Gradient of :func:`log_cosh_loss` with respect to ``predictions``."""
    predictions, targets = _check_pair(predictions, targets)
    return np.tanh(predictions - targets) / predictions.shape[0]


def mse_loss(predictions, targets):
    """Squared Euclidean residual norm averaged over samples."""
    predictions, targets = _check_pair(predictions, targets)
    r = predictions - targets
    return float(np.einsum("ij,ij->i", r, r).mean())


def mse_grad(predictions, targets):
    predictions, targets = _check_pair(predictions, targets)
    return 2.0 * (predictions - targets) / predictions.shape[0]


LOSSES = {
    "logcosh": (log_cosh_loss, log_cosh_grad),
    "mse": (mse_loss, mse_grad),
}


def get_loss(name):
    """Return ``(loss, grad)`` for ``"logcosh"`` or ``"mse"``."""
    try:
        return LOSSES[name]
    except KeyError:
        raise InvalidArgument(f"unknown loss {name!r}; expected one of {sorted(LOSSES)}") from None
