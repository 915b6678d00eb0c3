"""Warm-start outer loop around the solver or the unrolled decoder.

Step ``j`` (0-based) reconstructs ``xhat[j+1]`` with the current initial guess,
then moves the guess to ``xhat[j] + j/(j+3) * (xhat[j+1] - xhat[j])``.  The
reconstruction before the first step is taken to be the first output, so the
guess after step 0 is ``xhat[1]``.  ``mu`` stays fixed.
"""
from dataclasses import dataclass, replace

import numpy as np

from .errors import DivergenceError, InvalidArgument
from .unfolded import backward, forward


def continuation_weight(j):
    """Extrapolation weight ``j / (j + 3)``."""
    if j < 0:
        raise InvalidArgument(f"continuation index must be nonnegative, got {j}")
    return j / (j + 3.0)


@dataclass(frozen=True)
class ContinuationConfig:
    J: int = 1

    def __post_init__(self):
        if self.J < 1:
            raise InvalidArgument("need at least one continuation step")


def run_continuation(inner, x0, J):
    """Generic loop.  ``inner(x0, j)`` returns a reconstruction.

    Returns ``(x_star, outputs, guesses)`` where ``guesses[j]`` is the initial
    guess fed to step ``j``.
    """
    if J < 1:
        raise InvalidArgument("need at least one continuation step")
    outputs, guesses = [], []
    prev = None
    for j in range(J):
        guesses.append(x0)
        try:
            xhat = inner(x0, j)
        except DivergenceError as err:
            raise DivergenceError("inner solve diverged", index=err.index, step=j) from None
        outputs.append(xhat)
        if j == J - 1:
            break
        if prev is None:
            prev = xhat
        x0 = prev + continuation_weight(j) * (xhat - prev)
        prev = xhat
    return outputs[-1], outputs, guesses


def continued_solve(problem, W, solver_config, config, with_trace=False):
    """Warm-started model-based solve.  Returns ``(x_star, per-step results)``."""
    from .solver import solve

    results = []

    def inner(x0, j):
        result = solve(replace(problem, x0=x0), W, solver_config, with_trace=with_trace)
        results.append(result)
        return result.x

    x_star, _, _ = run_continuation(inner, np.asarray(problem.x0, dtype=float), config.J)
    return x_star, results


@dataclass
class ContinuationTape:
    tapes: list
    J: int


def continued_decoder(decoder, y, x0, A, eps, J, keep_tape=False):
    """Warm-started unrolled decoder; returns ``(x_star, tape)``."""
    tapes = []

    def inner(guess, j):
        xhat, tape = forward(decoder, y, guess, A, eps, keep_tape=keep_tape)
        tapes.append(tape)
        return xhat

    x_star, _, _ = run_continuation(inner, np.asarray(x0, dtype=float), J)
    return x_star, (ContinuationTape(tapes, J) if keep_tape else None)


def continued_backward(decoder, ctape, upstream):
    """Gradient w.r.t. W through every continuation step and guess update."""
    J = ctape.J
    if len(ctape.tapes) != J:
        raise InvalidArgument("continuation tape is incomplete")
    # grads[j] is the adjoint of xhat[j]; index 0 aliases index 1
    grads = [None] * (J + 1)
    grads[J] = np.atleast_2d(np.asarray(upstream, dtype=float))
    gW = np.zeros_like(decoder.W)
    for j in range(J - 1, -1, -1):
        g_step, g_guess = backward(decoder, ctape.tapes[j], grads[j + 1], return_x0=True)
        gW += g_step
        if j == 0:
            break
        w = continuation_weight(j - 1)
        target = max(j - 1, 1)
        grads[j] = grads[j] + w * g_guess if grads[j] is not None else w * g_guess
        carry = (1.0 - w) * g_guess
        grads[target] = grads[target] + carry if grads[target] is not None else carry
    return gW
