"""First-order primal-dual solver for the analysis-l1 conic problem

    minimise ||W x||_1 + (mu/2) ||x - x0||^2   subject to   ||y - A x||_2 <= eps.

The solver works on the smoothed dual: ``z1`` is the dual of the l1 term and
``z2`` the dual of the l2 constraint.  Each iteration recovers ``x`` in closed
form from the extrapolated duals, takes a projected/proximal step on the
duals with step ``t / theta`` and updates the averaged sequence ``u``.

Two dual updates are available:

``"conic"`` (default)
    ``z1`` is projected onto the unit l-infinity ball and ``z2`` is block
    shrunk with threshold ``eps * t2 / theta``; the gradient step starts from
    ``z``.  This is the update whose fixed points solve the problem above.
``"listing"``
    ``z1`` is truncated at ``t1 / theta``, ``z2`` is soft-thresholded
    componentwise and both steps start from the extrapolated point
    ``(1 - theta) u + theta z``.  Kept for short unrolled networks; it does not
    converge when iterated for long.

Arrays may be 1-D (a single problem) or 2-D with one problem per row, in
which case ``eps`` has shape ``(batch,)``.
"""
import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, InvalidArgument
from .ops import _block, _soft, theta_next
from .sensing import spectral_norm_estimate

PROX_MODES = ("conic", "listing")


@dataclass(frozen=True)
class SensingProblem:
    A: np.ndarray
    y: np.ndarray
    eps: float
    x0: np.ndarray

    def __post_init__(self):
        m, n = np.shape(self.A)
        if m == 0 or n == 0:
            raise InvalidArgument("measurement matrix has a zero dimension")
        if np.shape(self.y)[-1] != m or np.shape(self.x0)[-1] != n:
            raise InvalidArgument(
                f"y has length {np.shape(self.y)[-1]} and x0 length {np.shape(self.x0)[-1]}, "
                f"expected {m} and {n}"
            )
        if np.any(np.asarray(self.eps) < 0):
            raise InvalidArgument("eps must be nonnegative")


@dataclass(frozen=True)
class SolverConfig:
    """Step sizes left as ``None`` are set to ``mu / sigma_max^2`` of W and A."""

    mu: float = 1.0
    t1: float = None
    t2: float = None
    max_iters: int = 500
    rel_tol: float = 0.0
    prox: str = "conic"

    def __post_init__(self):
        if self.mu <= 0:
            raise InvalidArgument("mu must be positive")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be at least 1")
        if self.rel_tol < 0:
            raise InvalidArgument("rel_tol must be nonnegative")
        for name in ("t1", "t2"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.prox not in PROX_MODES:
            raise InvalidArgument(f"prox must be one of {PROX_MODES}, got {self.prox!r}")

    def resolved(self, W, A):
        """Copy with both step sizes filled in."""
        t1 = self.t1 if self.t1 is not None else default_step(W, self.mu)
        t2 = self.t2 if self.t2 is not None else default_step(A, self.mu)
        return replace(self, t1=t1, t2=t2)


def default_step(M, mu):
    sigma = spectral_norm_estimate(M)
    return mu / sigma**2 if sigma > 0 else mu


@dataclass
class SolverState:
    x: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    theta: float = 1.0
    k: int = 0


@dataclass
class StepRecord:
    """Intermediate values of one iteration, kept for the reverse pass."""

    theta: float
    p1: np.ndarray
    p2: np.ndarray
    x: np.ndarray
    v1: np.ndarray = None
    v2: np.ndarray = None


def _check_W(W, n):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] != n or W.shape[0] == 0:
        raise InvalidArgument(f"analysis operator must be N x {n}, got shape {W.shape}")
    return W


def solver_init(problem, W):
    """Zero duals, ``u = z`` and ``theta = 1``; ``x`` starts at ``x0``."""
    A = np.asarray(problem.A, dtype=float)
    m, n = A.shape
    W = _check_W(W, n)
    lead = np.shape(problem.y)[:-1]
    z1 = np.zeros(lead + (W.shape[0],))
    z2 = np.zeros(lead + (m,))
    x0 = np.asarray(problem.x0, dtype=float)
    return SolverState(x=x0.copy(), z1=z1, z2=z2, u1=z1.copy(), u2=z2.copy(), theta=1.0, k=0)


def primal_point(state, W, A, x0, mu):
    """``x`` recovered from the extrapolated duals, plus those duals."""
    theta = state.theta
    p1 = (1.0 - theta) * state.u1 + theta * state.z1
    p2 = (1.0 - theta) * state.u2 + theta * state.z2
    x = x0 + (p1 @ W - p2 @ A) / mu
    return x, p1, p2


def _finite(a):
    # a single reduction is enough: any inf or nan makes the sum non-finite
    return math.isfinite(np.add.reduce(a, axis=None))


def iterate(state, W, A, y, eps, x0, t1, t2, mu, prox="conic", record=None, duals=True):
    """One loop body.  Returns the new state; ``record`` (a list) receives a StepRecord.

    With ``duals=False`` only ``x`` is computed (the last layer of an unrolled
    network needs nothing else).
    """
    theta = state.theta
    x, p1, p2 = primal_point(state, W, A, x0, mu)
    if not _finite(x):
        raise DivergenceError("non-finite primal iterate", index=state.k)
    if not duals:
        if record is not None:
            record.append(StepRecord(theta, p1, p2, x))
        return SolverState(x, state.z1, state.z2, state.u1, state.u2, theta, state.k + 1)

    s1 = t1 / theta
    s2 = t2 / theta
    eps = np.asarray(eps, dtype=float)
    if eps.ndim:
        eps = eps[..., None]
    if prox == "conic":
        v1 = state.z1 - s1 * (x @ W.T)
        z1 = np.clip(v1, -1.0, 1.0)
        v2 = state.z2 - s2 * (y - x @ A.T)
        z2 = _block(v2, s2 * eps)
    else:
        v1 = p1 - s1 * (x @ W.T)
        z1 = np.clip(v1, -s1, s1)
        v2 = p2 - s2 * (y - x @ A.T)
        z2 = _soft(v2, s2 * eps)
    if not (_finite(z1) and _finite(z2)):
        raise DivergenceError("non-finite dual iterate", index=state.k)
    u1 = (1.0 - theta) * state.u1 + theta * z1
    u2 = (1.0 - theta) * state.u2 + theta * z2
    if record is not None:
        record.append(StepRecord(theta, p1, p2, x, v1, v2))
    return SolverState(x, z1, z2, u1, u2, theta_next(theta), state.k + 1)


def solver_step(state, problem, W, config):
    """Advance ``state`` by one iteration (``config`` must have step sizes resolved)."""
    if config.t1 is None or config.t2 is None:
        config = config.resolved(W, problem.A)
    A = np.asarray(problem.A, dtype=float)
    W = _check_W(W, A.shape[1])
    if state.z1.shape[-1] != W.shape[0] or state.z2.shape[-1] != A.shape[0]:
        raise InvalidArgument("solver state does not match the problem dimensions")
    return iterate(state, W, A, problem.y, problem.eps, problem.x0,
                   config.t1, config.t2, config.mu, config.prox)


def objective(x, W, mu, x0):
    """``||W x||_1 + (mu/2) ||x - x0||^2``."""
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    if x.shape != np.shape(x0) or W.shape[1] != x.shape[-1]:
        raise InvalidArgument("x, x0 and W have inconsistent dimensions")
    d = x - x0
    return float(np.abs(W @ x).sum() + 0.5 * mu * (d @ d))


def feasibility_gap(x, A, y, eps):
    """``max(0, ||y - A x||_2 - eps)``."""
    A = np.asarray(A, dtype=float)
    if A.shape != (np.shape(y)[-1], np.shape(x)[-1]):
        raise InvalidArgument("x, y and A have inconsistent dimensions")
    return max(0.0, float(np.linalg.norm(y - A @ x)) - eps)


@dataclass
class TraceRow:
    iter: int
    objective: float
    feasibility_gap: float
    rel_change: float


@dataclass
class SolveResult:
    x: np.ndarray
    trace: list = field(default_factory=list)
    state: SolverState = None


def solve(problem, W, config, with_trace=True):
    """Iterate until ``max_iters`` or the relative change of ``x`` drops below ``rel_tol``.

    Returns the ``x`` computed in the last executed iteration.
    """
    A = np.asarray(problem.A, dtype=float)
    W = _check_W(W, A.shape[1])
    config = config.resolved(W, A)
    state = solver_init(problem, W)
    trace = []
    prev = None
    for _ in range(config.max_iters):
        state = iterate(state, W, A, problem.y, problem.eps, problem.x0,
                        config.t1, config.t2, config.mu, config.prox)
        x = state.x
        if prev is None:
            change = float("nan")
        else:
            change = float(np.linalg.norm(x - prev) / max(1.0, np.linalg.norm(prev)))
        if with_trace:
            trace.append(TraceRow(state.k, objective(x, W, config.mu, problem.x0),
                                  feasibility_gap(x, A, problem.y, problem.eps), change))
        if prev is not None and change < config.rel_tol:
            break
        prev = x
    return SolveResult(state.x, trace, state)


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "objective", "feasibility_gap", "rel_change"])
        for row in trace:
            writer.writerow([row.iter, repr(row.objective), repr(row.feasibility_gap), repr(row.rel_change)])
