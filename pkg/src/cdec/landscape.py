"""Two-direction loss surfaces around a trained analysis operator."""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument


@dataclass
class LandscapeGrid:
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.losses.shape != (len(self.alphas), len(self.betas)):
            raise InvalidArgument("loss grid does not match the axes")

    def origin(self):
        i = int(np.flatnonzero(self.alphas == 0)[0])
        j = int(np.flatnonzero(self.betas == 0)[0])
        return self.losses[i, j]


def random_directions(W, seed):
    """Two Gaussian directions shaped like W, each row rescaled to the norm of W's row.

    Rows of W that are identically zero give zero rows in both directions.
    """
    W = np.asarray(W, dtype=float)
    if W.size == 0:
        raise InvalidArgument("W is empty")
    rng = np.random.default_rng(seed)
    target = np.linalg.norm(W, axis=1, keepdims=True)
    directions = []
    for _ in range(2):
        D = rng.standard_normal(W.shape)
        norm = np.linalg.norm(D, axis=1, keepdims=True)
        directions.append(np.where(target > 0, D * (target / norm), 0.0))
    return directions[0], directions[1]


def default_axis(points=25, span=1.0):
    axis = np.linspace(-span, span, points)
    if points % 2:
        axis[points // 2] = 0.0
    return axis


def scan(loss_at, W, D1, D2, alphas, betas, meta=None):
    """Evaluate ``loss_at(W + a*D1 + b*D2)`` on the grid of ``alphas`` x ``betas``.

    ``loss_at`` receives a fresh array and must not keep it.  Non-finite or
    failing evaluations are stored as NaN.  The origin is evaluated at W itself.
    """
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    if alphas.size == 0 or betas.size == 0 or 0 not in alphas or 0 not in betas:
        raise InvalidArgument("both axes must be non-empty and contain 0")
    if np.any(np.diff(alphas) <= 0) or np.any(np.diff(betas) <= 0):
        raise InvalidArgument("axes must be strictly increasing")
    losses = np.empty((alphas.size, betas.size))
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            point = W.copy() if a == 0 and b == 0 else W + a * D1 + b * D2
            try:
                value = float(loss_at(point))
            except (ArithmeticError, FloatingPointError):
                value = float("nan")
            losses[i, j] = value if np.isfinite(value) else np.nan
    return LandscapeGrid(alphas, betas, losses, dict(meta or {}))


def roughness(grid, log_scale=True):
    """Mean absolute discrete Laplacian over interior points.

    Log-losses are used by default.  Returns ``(value, points_used)``; interior
    points whose stencil touches a missing value are skipped.
    """
    f = np.log(grid.losses) if log_scale else np.asarray(grid.losses, dtype=float)
    ha = np.diff(grid.alphas)
    hb = np.diff(grid.betas)
    if len(ha) < 2 or len(hb) < 2:
        raise InvalidArgument("need at least 3 points per axis")
    if not (np.allclose(ha, ha[0]) and np.allclose(hb, hb[0])):
        raise InvalidArgument("roughness needs uniform spacing")
    ha, hb = ha[0], hb[0]
    lap = ((f[2:, 1:-1] - 2 * f[1:-1, 1:-1] + f[:-2, 1:-1]) / ha**2
           + (f[1:-1, 2:] - 2 * f[1:-1, 1:-1] + f[1:-1, :-2]) / hb**2)
    valid = np.isfinite(lap)
    if not valid.any():
        return float("nan"), 0
    return float(np.abs(lap[valid]).mean()), int(valid.sum())


def write_grid(path, grid):
    """CSV ``alpha,beta,loss`` plus a ``.json`` sidecar with the grid meta."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["alpha", "beta", "loss"])
        for i, a in enumerate(grid.alphas):
            for j, b in enumerate(grid.betas):
                writer.writerow([repr(float(a)), repr(float(b)), repr(float(grid.losses[i, j]))])
    with open(f"{path}.meta.json", "w") as fh:
        json.dump(grid.meta, fh, indent=2, sort_keys=True)


def read_grid(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    alphas = np.unique(rows[:, 0])
    betas = np.unique(rows[:, 1])
    losses = rows[:, 2].reshape(len(alphas), len(betas))
    try:
        with open(f"{path}.meta.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        meta = {}
    return LandscapeGrid(alphas, betas, losses, meta)
