"""Unrolled decoder: L solver iterations with a learnable analysis operator W.

Each layer is one loop body of :func:`cdec.solver.iterate`; the same W is used
in every layer, and the step sizes and ``mu`` stay fixed.  The last layer only
needs its primal point, so its dual updates are skipped.

Inputs are batched row-wise: ``y`` is ``(batch, m)``, ``x0`` is ``(batch, n)``
and ``eps`` is ``(batch,)``.
"""
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, FormatError, InvalidArgument
from .ops import theta_schedule
from .solver import PROX_MODES, SolverState, default_step, iterate

CHECKPOINT_MAGIC = b"CDEC"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII3d")


@dataclass(frozen=True)
class UnrolledDecoder:
    L: int
    W: np.ndarray
    m: int
    t1: float
    t2: float
    mu: float = 1.0
    prox: str = "conic"

    def __post_init__(self):
        if self.L < 1:
            raise InvalidArgument("decoder needs at least one layer")
        if self.prox not in PROX_MODES:
            raise InvalidArgument(f"prox must be one of {PROX_MODES}")
        if np.ndim(self.W) != 2 or not np.all(np.isfinite(self.W)):
            raise InvalidArgument("W must be a finite 2-D array")
        if min(self.t1, self.t2, self.mu) <= 0:
            raise InvalidArgument("t1, t2 and mu must be positive")

    @property
    def N(self):
        return self.W.shape[0]

    @property
    def n(self):
        return self.W.shape[1]

    @property
    def schedule(self):
        return theta_schedule(self.L)

    def with_W(self, W):
        return replace(self, W=np.asarray(W, dtype=float))


def make_decoder(L, W, A, mu=1.0, prox="conic", t1=None, t2=None):
    """Decoder whose step sizes default to ``mu / sigma_max^2`` of the initial W and of A."""
    W = np.asarray(W, dtype=float)
    A = np.asarray(A, dtype=float)
    t1 = default_step(W, mu) if t1 is None else t1
    t2 = default_step(A, mu) if t2 is None else t2
    return UnrolledDecoder(L=L, W=W, m=A.shape[0], t1=t1, t2=t2, mu=mu, prox=prox)


@dataclass
class ForwardTape:
    records: list
    y: np.ndarray
    eps: np.ndarray
    A: np.ndarray
    shape: tuple = field(default=())

    def __len__(self):
        return len(self.records)


def _as_batch(decoder, y, x0, A, eps):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    A = np.asarray(A, dtype=float)
    if A.shape != (decoder.m, decoder.n):
        raise InvalidArgument(f"A must be {decoder.m} x {decoder.n}, got {A.shape}")
    if y.shape[1] != decoder.m or x0.shape[1] != decoder.n:
        raise InvalidArgument("y or x0 does not match the decoder dimensions")
    if not (y.shape[0] == x0.shape[0] == eps.shape[0]):
        raise InvalidArgument("y, x0 and eps must hold the same number of samples")
    return y, x0, A, eps


def forward(decoder, y, x0, A, eps, keep_tape=True):
    """Run all layers; returns ``(x_hat, tape)`` with ``tape=None`` when not kept."""
    single = np.ndim(y) == 1
    y, x0, A, eps = _as_batch(decoder, y, x0, A, eps)
    W = decoder.W
    zeros1 = np.zeros((y.shape[0], decoder.N))
    zeros2 = np.zeros_like(y)
    state = SolverState(x0, zeros1, zeros2, zeros1, zeros2, 1.0, 0)
    records = [] if keep_tape else None
    for k in range(decoder.L):
        try:
            state = iterate(state, W, A, y, eps, x0, decoder.t1, decoder.t2, decoder.mu,
                            decoder.prox, record=records, duals=k < decoder.L - 1)
        except DivergenceError:
            raise DivergenceError("non-finite value in decoder layer", index=k) from None
    x_hat = state.x[0] if single else state.x
    tape = ForwardTape(records, y, eps, A, decoder.W.shape) if keep_tape else None
    return x_hat, tape


def _shrink_vjp(v, tau, g):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    active = norm > tau
    safe = np.where(active, norm, 1.0)
    scale = np.where(active, 1.0 - tau / safe, 0.0)
    curv = np.where(active, tau / safe**3, 0.0)
    return scale * g + curv * np.einsum("ij,ij->i", v, g)[:, None] * v


def backward(decoder, tape, upstream, return_x0=False):
    """Gradient of a scalar loss w.r.t. W, given ``d loss / d x_hat``.

    ``upstream`` has the shape of ``x_hat``.  With ``return_x0`` the gradient
    with respect to the per-sample initial guesses is returned as well.
    """
    if tape is None or len(tape) != decoder.L or tape.shape != decoder.W.shape:
        raise InvalidArgument("tape does not come from a forward pass of this decoder")
    W, A, mu = decoder.W, tape.A, decoder.mu
    gx_out = np.atleast_2d(np.asarray(upstream, dtype=float))
    if gx_out.shape != tape.records[-1].x.shape:
        raise InvalidArgument("upstream gradient has the wrong shape")
    conic = decoder.prox == "conic"
    eps = tape.eps[:, None]

    gW = np.zeros_like(W)
    gx0 = np.zeros_like(gx_out)
    # adjoints of the state leaving the current layer
    gz1 = gu1 = gz2 = gu2 = None
    for k in range(decoder.L - 1, -1, -1):
        rec = tape.records[k]
        theta = rec.theta
        c = 1.0 - theta
        if k == decoder.L - 1:
            gx = gx_out.copy()
            gz1_in = gu1_in = gz2_in = gu2_in = 0.0
            gp1 = gp2 = 0.0
        else:
            s1 = decoder.t1 / theta
            s2 = decoder.t2 / theta
            gz1n = gz1 + theta * gu1
            gz2n = gz2 + theta * gu2
            gu1_in = c * gu1
            gu2_in = c * gu2
            if conic:
                gv1 = np.where(np.abs(rec.v1) < 1.0, gz1n, 0.0)
                gv2 = _shrink_vjp(rec.v2, s2 * eps, gz2n)
            else:
                gv1 = np.where(np.abs(rec.v1) < s1, gz1n, 0.0)
                gv2 = np.where(np.abs(rec.v2) > s2 * eps, gz2n, 0.0)
            gx = s2 * (gv2 @ A) - s1 * (gv1 @ W)
            gW -= s1 * (gv1.T @ rec.x)
            if conic:
                gz1_in, gz2_in = gv1, gv2
                gp1 = gp2 = 0.0
            else:
                gz1_in = gz2_in = 0.0
                gp1, gp2 = gv1, gv2
        gx0 += gx
        if k == 0:
            # the initial duals are constants and p1 = p2 = 0
            break
        gp1 = gp1 + (gx @ W.T) / mu
        gp2 = gp2 - (gx @ A.T) / mu
        gW += rec.p1.T @ gx / mu
        gz1 = gz1_in + theta * gp1
        gu1 = gu1_in + c * gp1
        gz2 = gz2_in + theta * gp2
        gu2 = gu2_in + c * gp2
    if return_x0:
        return gW, gx0
    return gW


def describe(decoder):
    """Structure summary as a plain dict."""
    return {
        "layers": decoder.L,
        "N": decoder.N,
        "n": decoder.n,
        "m": decoder.m,
        "parameters": decoder.N * decoder.n,
        "t1": decoder.t1,
        "t2": decoder.t2,
        "mu": decoder.mu,
        "prox": decoder.prox,
        "schedule": decoder.schedule,
    }


def save_checkpoint(path, decoder):
    """Little-endian header (magic, version, L, N, n, m, t1, t2, mu) then W row-major."""
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, decoder.L, decoder.N,
                          decoder.n, decoder.m, decoder.t1, decoder.t2, decoder.mu)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(decoder.W, dtype="<f8").tobytes())


def load_checkpoint(path, prox="conic"):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError("file too short for checkpoint header", offset=len(raw))
    magic, version, L, N, n, m, t1, t2, mu = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    expected = _HEADER.size + 8 * N * n
    if len(raw) != expected:
        raise FormatError(f"checkpoint should be {expected} bytes", offset=len(raw))
    W = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(N, n).astype(float)
    return UnrolledDecoder(L=L, W=W, m=m, t1=t1, t2=t2, mu=mu, prox=prox)
