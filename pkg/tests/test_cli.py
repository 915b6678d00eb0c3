import json

import numpy as np
import pytest

from cdec.artifacts import file_hash, read_sidecar
from cdec.cli import main
from cdec.config import load_config
from cdec.experiment import build_experiment, load_experiment
from cdec.landscape import read_grid
from cdec.solver import SensingProblem, SolverConfig, solve, write_trace

CELL = """
[data]
n = 24
sparsity = 3
train = 150
test = 40
[model]
layers = 3
n_multiplier = 3
[train]
max_epochs = 2
batch_size = 32
[landscape]
points = 5
samples = 20
"""

PNG = b"\x89PNG\r\n\x1a\n"


@pytest.fixture
def cell(tmp_path):
    path = tmp_path / "cell.ini"
    path.write_text(CELL)
    return ["--config", str(path)]


@pytest.fixture
def trained(tmp_path, cell):
    out = tmp_path / "run"
    assert main(["train", *cell, "--no-plots", "--output-dir", str(out)]) == 0
    return out


def test_missing_dataset_is_a_config_error(tmp_path, capsys):
    code = main(["solve", "--set", "data.source=idx", "--set", f"data.path={tmp_path / 'nope.gz'}",
                 "--output-dir", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert "[data] path" in err and "nope.gz" in err


def test_bad_config_line_is_reported(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[model]\nlayers = five\n")
    assert main(["solve", "--config", str(path)]) == 2
    assert f"{path}:2" in capsys.readouterr().err


def test_single_step_solve_equals_plain_solver(tmp_path, cell):
    out = tmp_path / "solve"
    assert main(["solve", *cell, "--output-dir", str(out), "--continuation-steps", "1"]) == 0
    cfg = load_config(cell[1])
    exp = build_experiment(cfg)
    t = exp.splits.test
    result = solve(SensingProblem(exp.A, t.y[0], float(t.eps[0]), t.x0[0]), np.eye(exp.n),
                   SolverConfig(max_iters=cfg.solve.max_iters))
    write_trace(tmp_path / "plain.csv", result.trace)
    assert (out / "trace.csv").read_bytes() == (tmp_path / "plain.csv").read_bytes()
    xhat = np.loadtxt(out / "xhat.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(xhat[:, 1], result.x)
    assert (out / "trace.png").read_bytes()[:8] == PNG
    side = read_sidecar(str(out / "trace.csv"))
    assert side["sha1"] == file_hash(out / "trace.csv")
    assert side["config"]["model"]["continuation_steps"] == 1


def test_continued_solve_trace_covers_every_step(tmp_path, cell):
    out = tmp_path / "solve"
    assert main(["solve", *cell, "--no-plots", "--output-dir", str(out), "--continuation-steps", "3",
                 "--set", "solve.max_iters=40"]) == 0
    rows = (out / "trace.csv").read_text().splitlines()
    assert len(rows) == 1 + 120 and rows[-1].startswith("120,")


def test_train_rerun_is_identical(tmp_path, cell, trained):
    again = tmp_path / "again"
    assert main(["train", *cell, "--no-plots", "--output-dir", str(again)]) == 0
    for name in ("history.csv", "model.ckpt"):
        assert (trained / name).read_bytes() == (again / name).read_bytes()
    metrics = json.loads((trained / "metrics.json").read_text())
    assert (metrics["L"], metrics["J"], metrics["N"], metrics["loss"]) == (3, 1, 3, "logcosh")
    assert read_sidecar(str(trained / "model.ckpt"))["prox"] == "conic"


def test_baseline_flags(tmp_path, cell):
    out = tmp_path / "base"
    assert main(["train", *cell, "--output-dir", str(out), "--loss", "mse", "--continuation-steps", "1",
                 "--layers", "2"]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert (metrics["L"], metrics["J"], metrics["loss"]) == (2, 1, "mse")
    assert (out / "history.png").read_bytes()[:8] == PNG


def test_parallel_seeds_match_serial(tmp_path, cell):
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    assert main(["train", *cell, "--no-plots", "--output-dir", str(serial), "--seeds", "1", "2"]) == 0
    assert main(["train", *cell, "--no-plots", "--output-dir", str(parallel), "--seeds", "1", "2",
                 "--jobs", "2"]) == 0
    for seed in (1, 2):
        a = (serial / f"seed-{seed}" / "history.csv").read_bytes()
        assert a == (parallel / f"seed-{seed}" / "history.csv").read_bytes()
    assert (serial / "seed-1" / "history.csv").read_bytes() != (serial / "seed-2" / "history.csv").read_bytes()


def test_eval_reproduces_training_metrics(tmp_path, cell, trained):
    out = tmp_path / "eval"
    assert main(["eval", str(trained / "model.ckpt"), *cell, "--output-dir", str(out)]) == 0
    row = (out / "eval.csv").read_text().splitlines()[1].split(",")
    metrics = json.loads((trained / "metrics.json").read_text())
    assert float(row[4]) == metrics["test_loss"] and float(row[5]) == metrics["ege"]


def test_landscape_grid(tmp_path, cell, trained):
    ckpt = trained / "model.ckpt"
    before = file_hash(ckpt)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["landscape", str(ckpt), *cell, "--output-dir", str(a), "--direction-seed", "1"]) == 0
    assert main(["landscape", str(ckpt), *cell, "--no-plots", "--output-dir", str(b),
                 "--direction-seed", "2"]) == 0
    assert file_hash(ckpt) == before
    ga, gb = read_grid(a / "landscape.csv"), read_grid(b / "landscape.csv")
    assert ga.meta["directions_sha1"] != gb.meta["directions_sha1"]
    assert (ga.meta["seed"], gb.meta["seed"]) == (1, 2)
    # the origin row is the plain evaluation of the stored model on the same samples
    from cdec.train import split_loss
    from cdec.unfolded import load_checkpoint

    exp = build_experiment(load_config(cell[1]))
    data = exp.splits.test.subset(np.arange(20))
    assert ga.origin() == gb.origin() == split_loss(load_checkpoint(ckpt), data, 1, exp.A)
    assert (a / "landscape.png").read_bytes()[:8] == PNG


def test_full_size_landscape_has_625_rows(tmp_path, cell, trained):
    out = tmp_path / "scan"
    assert main(["landscape", str(trained / "model.ckpt"), *cell, "--no-plots", "--output-dir", str(out),
                 "--set", "landscape.points=25", "--set", "landscape.samples=5"]) == 0
    assert len((out / "landscape.csv").read_text().splitlines()) == 1 + 625


def test_corrupted_checkpoint(tmp_path, cell, trained, capsys):
    bad = tmp_path / "bad.ckpt"
    raw = bytearray((trained / "model.ckpt").read_bytes())
    raw[:4] = b"XXXX"
    bad.write_bytes(bytes(raw))
    assert main(["landscape", str(bad), *cell, "--output-dir", str(tmp_path / "o")]) == 4
    assert "magic" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, cell, capsys):
    with np.errstate(over="ignore", invalid="ignore"):
        code = main(["train", *cell, "--no-plots", "--output-dir", str(tmp_path / "d"),
                     "--set", "train.learning_rate=1e308"])
    assert code == 3
    assert "epoch" in capsys.readouterr().err


def test_gen_data_cache_round_trip(tmp_path, cell):
    out = tmp_path / "data"
    assert main(["gen-data", *cell, "--output-dir", str(out)]) == 0
    cached = load_experiment(str(out))
    fresh = build_experiment(load_config(cell[1]))
    np.testing.assert_array_equal(cached.A, fresh.A)
    for name in ("train", "val", "test"):
        np.testing.assert_array_equal(getattr(cached.splits, name).y, getattr(fresh.splits, name).y)
    run = tmp_path / "from-cache"
    assert main(["train", *cell, "--no-plots", "--output-dir", str(run), "--set", "data.source=cache",
                 "--set", f"data.path={out}"]) == 0
    direct = tmp_path / "direct"
    assert main(["train", *cell, "--no-plots", "--output-dir", str(direct)]) == 0
    assert (run / "history.csv").read_bytes() == (direct / "history.csv").read_bytes()


def test_compare(tmp_path, cell, capsys):
    runs = tmp_path / "runs"
    assert main(["train", *cell, "--no-plots", "--output-dir", str(runs / "one")]) == 0
    assert main(["compare", str(runs)]) == 0
    lines = (runs / "compare.csv").read_text().splitlines()
    assert len(lines) == 2
    assert (runs / "compare.png").read_bytes()[:8] == PNG
    assert "test_loss" in (runs / "compare.txt").read_text().splitlines()[0]

    assert main(["train", *cell, "--no-plots", "--output-dir", str(runs / "j2"), "--continuation-steps", "2",
                 "--loss", "mse"]) == 0
    assert main(["train", *cell, "--no-plots", "--output-dir", str(runs / "lr"),
                 "--set", "train.learning_rate=1e-2"]) == 0
    capsys.readouterr()
    assert main(["compare", str(runs), "--no-plots"]) == 0
    err = capsys.readouterr().err
    assert "missing cell" in err and "L=3 J=2 N=3 loss=logcosh" in err
    rows = (runs / "compare.csv").read_text().splitlines()[1:]
    flagged = [r for r in rows if r.endswith("heterogeneous")]
    assert len(rows) == 3 and len(flagged) == 2


def test_compare_seed_average(tmp_path, cell):
    runs = tmp_path / "runs"
    assert main(["train", *cell, "--no-plots", "--output-dir", str(runs), "--seeds", "0", "1", "2"]) == 0
    assert main(["compare", str(runs), "--no-plots"]) == 0
    header, row = (runs / "compare.csv").read_text().splitlines()
    values = dict(zip(header.split(","), row.split(",")))
    losses = [json.loads((runs / f"seed-{s}" / "metrics.json").read_text())["test_loss"] for s in range(3)]
    assert values["seeds"] == "3"
    assert abs(float(values["test_loss"]) - np.mean(losses)) <= 1e-15


def test_compare_without_runs(tmp_path):
    assert main(["compare", str(tmp_path)]) == 4
