import hashlib

import numpy as np
import pytest

from cdec.errors import InvalidArgument
from cdec.landscape import (LandscapeGrid, default_axis, random_directions, read_grid, roughness,
                            scan, write_grid)


def _grid(fn, points=7, span=3.0):
    axis = default_axis(points, span)
    A, B = np.meshgrid(axis, axis, indexing="ij")
    return LandscapeGrid(axis, axis.copy(), fn(A, B))


def test_direction_rows_match_W(rng):
    W = rng.standard_normal((40, 12)) * rng.uniform(0.1, 3.0, size=(40, 1))
    D1, D2 = random_directions(W, seed=3)
    for D in (D1, D2):
        assert D.shape == W.shape
        np.testing.assert_allclose(np.linalg.norm(D, axis=1), np.linalg.norm(W, axis=1), rtol=0, atol=1e-12)


def test_directions_depend_on_seed(rng):
    W = rng.standard_normal((6, 4))
    a = random_directions(W, 1)
    b = random_directions(W, 1)
    c = random_directions(W, 2)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], c[0])


def test_zero_row_gives_zero_direction_row(rng):
    W = rng.standard_normal((5, 3))
    W[2] = 0.0
    D1, D2 = random_directions(W, 0)
    assert not D1[2].any() and not D2[2].any()
    assert np.all(np.linalg.norm(D1[[0, 1, 3, 4]], axis=1) > 0)


def test_large_directions_nearly_orthogonal(rng):
    W = rng.standard_normal((500, 200))
    D1, D2 = random_directions(W, 7)
    cos = D1.ravel() @ D2.ravel() / (np.linalg.norm(D1) * np.linalg.norm(D2))
    assert abs(cos) <= 0.1


def test_empty_W_rejected():
    with pytest.raises(InvalidArgument):
        random_directions(np.zeros((0, 3)), 0)


def test_paraboloid_roughness():
    grid = _grid(lambda a, b: a**2 + b**2)
    value, count = roughness(grid, log_scale=False)
    assert value == pytest.approx(4.0, abs=1e-12)
    assert count == 25


def test_constant_grid_is_flat():
    grid = _grid(lambda a, b: np.full_like(a, 2.5))
    assert roughness(grid) == (0.0, 25)
    assert roughness(grid, log_scale=False) == (0.0, 25)


def test_roughness_skips_missing_points():
    grid = _grid(lambda a, b: a**2 + b**2 + 1.0)
    grid.losses[3, 3] = np.nan
    _, count = roughness(grid)
    assert count == 25 - 5


def test_roughness_needs_uniform_axes():
    grid = LandscapeGrid(np.array([-1.0, 0.0, 2.0]), np.array([-1.0, 0.0, 1.0]), np.ones((3, 3)))
    with pytest.raises(InvalidArgument):
        roughness(grid)


def test_scan_origin_and_shape(rng):
    W = rng.standard_normal((6, 3))
    D1, D2 = random_directions(W, 0)
    target = rng.standard_normal(3)

    def loss_at(M):
        return float(np.sum((M @ target) ** 2))

    axis = default_axis(5, 1.0)
    grid = scan(loss_at, W, D1, D2, axis, axis, {"seed": 0})
    assert grid.losses.shape == (5, 5)
    assert grid.origin() == loss_at(W)
    i, j = 1, 3
    expected = loss_at(W + axis[i] * D1 + axis[j] * D2)
    assert grid.losses[i, j] == expected


def test_scan_leaves_model_untouched(rng):
    W = rng.standard_normal((8, 4))
    digest = hashlib.sha1(W.tobytes()).hexdigest()
    D1, D2 = random_directions(W, 0)

    def vandal(M):
        M *= 0.0  # the scan hands out copies
        return 1.0

    scan(vandal, W, D1, D2, default_axis(3), default_axis(3))
    assert hashlib.sha1(W.tobytes()).hexdigest() == digest


def test_scan_records_failures_as_missing(rng):
    W = rng.standard_normal((4, 2))
    D1, D2 = random_directions(W, 0)

    def flaky(M):
        if M[0, 0] > W[0, 0] + 1e-9:
            raise FloatingPointError("overflow")
        return 1.0 if M[0, 0] > W[0, 0] - 1e-9 else float("inf")

    grid = scan(flaky, W, D1, D2, default_axis(5), default_axis(5))
    assert grid.origin() == 1.0
    assert np.isnan(grid.losses).any()


@pytest.mark.parametrize("axis", [np.array([-1.0, 1.0]), np.array([]), np.array([0.0, -1.0])])
def test_scan_axis_validation(rng, axis):
    W = rng.standard_normal((3, 2))
    with pytest.raises(InvalidArgument):
        scan(lambda M: 0.0, W, W, W, axis, default_axis(3))


def test_grid_roundtrip(tmp_path):
    grid = _grid(lambda a, b: np.exp(a - b))
    grid.meta = {"seed": 4, "normalization": "row"}
    path = tmp_path / "g.csv"
    write_grid(path, grid)
    back = read_grid(path)
    np.testing.assert_array_equal(back.losses, grid.losses)
    np.testing.assert_array_equal(back.alphas, grid.alphas)
    assert back.meta == grid.meta
    assert len(path.read_text().splitlines()) == 1 + 49


def test_default_axis_has_exact_zero():
    axis = default_axis(25, 1.0)
    assert axis[12] == 0.0 and axis[0] == -1.0 and axis[-1] == 1.0
    assert np.allclose(np.diff(axis), 1 / 12)
