"""Command-line runner: ``cdec <command> [--config FILE] [--set section.key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O or format error.
"""
import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .artifacts import blob_hash, file_hash, read_sidecar, write_sidecar
from .config import CONSUMERS, ConfigError, load_config
from .continuation import ContinuationConfig, continued_solve
from .errors import DivergenceError, FormatError, InvalidArgument, TrainingError
from .experiment import build_experiment, initial_decoder, save_experiment
from .landscape import default_axis, random_directions, roughness, scan, write_grid
from .solver import SensingProblem, SolverConfig, TraceRow, write_trace
from .train import evaluate, split_loss, train, write_history
from .unfolded import load_checkpoint, save_checkpoint

log = logging.getLogger("cdec")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
CELL_KEYS = ("L", "J", "N", "loss")


def _overrides(args):
    sets = list(args.set or [])
    for flag, key in (("layers", "model.layers"), ("continuation_steps", "model.continuation_steps"),
                      ("loss", "train.loss"), ("seed", "run.seed"), ("output_dir", "run.output_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            sets.append(f"{key}={value}")
    return sets


def _config(args):
    return load_config(args.config, _overrides(args))


def _outdir(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _publish(path, cfg, **extra):
    write_sidecar(path, cfg.as_dict(), **extra)
    log.info("wrote %s", path)


def _figure(fn, *args):
    from . import plotting

    path = getattr(plotting, fn)(*args)
    log.info("wrote %s", path)


def cmd_solve(args, cfg):
    exp = build_experiment(cfg)
    test = exp.splits.test
    if cfg.solve.sample >= len(test):
        raise ConfigError(f"[solve] sample: index {cfg.solve.sample} outside the {len(test)} test samples")
    i = cfg.solve.sample
    problem = SensingProblem(exp.A, test.y[i], float(test.eps[i]), test.x0[i])
    if cfg.solve.analysis == "identity":
        W = np.eye(exp.n)
    else:
        W = initial_decoder(cfg, exp).W
    solver = SolverConfig(mu=cfg.model.mu, t1=cfg.model.t1, t2=cfg.model.t2, max_iters=cfg.solve.max_iters,
                          rel_tol=cfg.solve.rel_tol, prox=cfg.model.prox)
    x_hat, results = continued_solve(problem, W, solver, ContinuationConfig(cfg.model.continuation_steps),
                                     with_trace=True)
    trace, offset = [], 0
    for result in results:
        trace.extend(TraceRow(r.iter + offset, r.objective, r.feasibility_gap, r.rel_change)
                     for r in result.trace)
        offset += len(result.trace)
    out = _outdir(cfg)
    path = os.path.join(out, "trace.csv")
    write_trace(path, trace)
    _publish(path, cfg)
    path = os.path.join(out, "xhat.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "x_hat", "x_true"])
        for k, (a, b) in enumerate(zip(x_hat, test.x[i])):
            writer.writerow([k, repr(float(a)), repr(float(b))])
    error = float(np.linalg.norm(x_hat - test.x[i]) / max(np.linalg.norm(test.x[i]), 1e-300))
    _publish(path, cfg, relative_error=error)
    if not args.no_plots:
        _figure("plot_trace", trace, os.path.join(out, "trace.png"))
    print(f"relative error {error:.6g} after {len(trace)} iterations")
    return EXIT_OK


def cmd_gen_data(args, cfg):
    exp = build_experiment(cfg)
    for path in save_experiment(_outdir(cfg), exp):
        _publish(path, cfg)
    s = exp.splits
    print(f"n={exp.n} m={exp.A.shape[0]} train={len(s.train)} val={len(s.val)} test={len(s.test)}")
    return EXIT_OK


def _cell(cfg):
    return {"L": cfg.model.layers, "J": cfg.model.continuation_steps, "N": cfg.model.n_multiplier,
            "loss": cfg.train.loss}


def _signature(cfg):
    """Hash of everything except the cell keys, the seed and where outputs go."""
    d = cfg.as_dict()
    for key in ("seed", "output_dir", "solve", "landscape"):
        d.pop(key)
    for key in ("layers", "continuation_steps", "n_multiplier"):
        d["model"].pop(key)
    for key in ("loss", "J", "seed"):
        d["train"].pop(key)
    return blob_hash(json.dumps(d, sort_keys=True).encode())[:12]


def train_one(cfg, plots=True):
    """Train one seed into ``cfg.output_dir``; returns the metrics summary."""
    exp = build_experiment(cfg)
    decoder = initial_decoder(cfg, exp)
    best, metrics = train(exp.splits, decoder, exp.A, cfg.train)
    out = _outdir(cfg)
    ckpt = os.path.join(out, "model.ckpt")
    save_checkpoint(ckpt, best)
    _publish(ckpt, cfg, prox=best.prox, J=cfg.model.continuation_steps)
    path = os.path.join(out, "history.csv")
    write_history(path, metrics.history)
    _publish(path, cfg)
    summary = dict(_cell(cfg), seed=cfg.seed, signature=_signature(cfg), train_loss=metrics.train_loss,
                   val_loss=metrics.val_loss, test_loss=metrics.test_loss, ege=metrics.ege,
                   best_epoch=metrics.best_epoch, epochs=len(metrics.history) - 1,
                   checkpoint_sha1=file_hash(ckpt))
    path = os.path.join(out, "metrics.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _publish(path, cfg)
    if plots:
        _figure("plot_history", metrics.history, os.path.join(out, "history.png"))
    return summary


def _train_seed(config_path, overrides, seed, output_dir, plots):
    cfg = load_config(config_path, list(overrides) + [f"run.seed={seed}", f"run.output_dir={output_dir}"])
    return train_one(cfg, plots)


def cmd_train(args, cfg):
    if not args.seeds:
        s = train_one(cfg, not args.no_plots)
        print(f"test_loss={s['test_loss']:.6g} ege={s['ege']:.6g} best_epoch={s['best_epoch']}")
        return EXIT_OK
    jobs = [(args.config, _overrides(args), seed, os.path.join(cfg.output_dir, f"seed-{seed}"),
             not args.no_plots) for seed in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_train_seed, *zip(*jobs)))
    else:
        summaries = [_train_seed(*job) for job in jobs]
    for s in summaries:
        print(f"seed {s['seed']}: test_loss={s['test_loss']:.6g} ege={s['ege']:.6g}")
    return EXIT_OK


def _load_model(path, cfg):
    prox = cfg.model.prox
    if os.path.exists(f"{path}.json"):
        prox = read_sidecar(path).get("prox", prox)
    return load_checkpoint(path, prox=prox)


def _matching(decoder, exp):
    if (decoder.n, decoder.m) != (exp.n, exp.A.shape[0]):
        raise ConfigError(f"checkpoint is for n={decoder.n}, m={decoder.m}; the configured data has "
                          f"n={exp.n}, m={exp.A.shape[0]}")


def cmd_eval(args, cfg):
    decoder = _load_model(args.checkpoint, cfg)
    exp = build_experiment(cfg)
    _matching(decoder, exp)
    J, loss = cfg.model.continuation_steps, cfg.train.loss
    metrics = evaluate(decoder, exp.splits.test, exp.A, J, loss, train_split=exp.splits.train)
    val = split_loss(decoder, exp.splits.val, J, exp.A, loss)
    path = os.path.join(_outdir(cfg), "eval.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["loss", "J", "train_loss", "val_loss", "test_loss", "ege"])
        writer.writerow([loss, J, repr(metrics.train_loss), repr(val), repr(metrics.test_loss), repr(metrics.ege)])
    _publish(path, cfg, checkpoint=os.path.abspath(args.checkpoint))
    print(f"test_loss={metrics.test_loss:.6g} ege={metrics.ege:.6g}")
    return EXIT_OK


def cmd_landscape(args, cfg):
    decoder = _load_model(args.checkpoint, cfg)
    before = file_hash(args.checkpoint)
    exp = build_experiment(cfg)
    _matching(decoder, exp)
    data = getattr(exp.splits, cfg.landscape.split)
    data = data.subset(np.arange(min(cfg.landscape.samples, len(data))))
    J, loss = cfg.model.continuation_steps, cfg.train.loss

    def loss_at(W):
        return split_loss(decoder.with_W(W), data, J, exp.A, loss)

    if args.direction_seed is not None:
        seed = args.direction_seed
    else:
        seed = int(np.random.SeedSequence([cfg.seed, CONSUMERS["directions"]]).generate_state(1)[0])
    D1, D2 = random_directions(decoder.W, seed)
    axis = default_axis(cfg.landscape.points, cfg.landscape.span)
    meta = {
        "model": before,
        "dataset": f"{cfg.data.source}:{cfg.landscape.split}:{len(data)}",
        "seed": seed,
        "normalization": "row",
        "directions_sha1": blob_hash(D1.tobytes() + D2.tobytes()),
        "J": J,
        "loss": loss,
    }
    grid = scan(loss_at, decoder.W, D1, D2, axis, axis, meta)
    value, count = roughness(grid)
    grid.meta.update(roughness=value, roughness_points=count, missing=int(np.isnan(grid.losses).sum()))
    path = os.path.join(_outdir(cfg), "landscape.csv")
    write_grid(path, grid)
    _publish(path, cfg, checkpoint=os.path.abspath(args.checkpoint))
    if file_hash(args.checkpoint) != before:
        raise OSError(f"checkpoint {args.checkpoint} changed during the scan")
    if not args.no_plots:
        _figure("plot_landscape", grid, os.path.join(cfg.output_dir, "landscape.png"))
    print(f"roughness={value:.6g} over {count} interior points, origin loss={grid.origin():.6g}")
    return EXIT_OK


def collect_runs(root):
    runs = []
    for dirpath, _, files in sorted(os.walk(root)):
        if "metrics.json" in files:
            with open(os.path.join(dirpath, "metrics.json")) as fh:
                run = json.load(fh)
            run["path"] = dirpath
            runs.append(run)
    return runs


def summarize(runs):
    """Seed-averaged rows per cell; cells mixing different settings are split and flagged.

    Returns ``(rows, missing)`` where ``missing`` lists cells of the full
    L x J x N x loss product that have no run.
    """
    groups = {}
    for run in runs:
        key = tuple(run[k] for k in CELL_KEYS)
        groups.setdefault(key, {}).setdefault(run["signature"], []).append(run)
    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        variants = groups[key]
        for signature in sorted(variants):
            members = variants[signature]
            row = dict(zip(CELL_KEYS, key))
            row["seeds"] = len(members)
            for name in ("train_loss", "test_loss", "ege"):
                row[name] = float(np.mean([r[name] for r in members]))
            row["signature"] = signature
            row["flag"] = "heterogeneous" if len(variants) > 1 else ""
            rows.append(row)
    import itertools

    axes = [sorted({r[k] for r in runs}, key=str) for k in CELL_KEYS]
    missing = [dict(zip(CELL_KEYS, c)) for c in itertools.product(*axes) if c not in groups]
    return rows, missing


def format_table(rows):
    columns = list(CELL_KEYS) + ["seeds", "train_loss", "test_loss", "ege", "flag"]
    cells = [[f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths)).rstrip()]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def cmd_compare(args, cfg):
    runs = collect_runs(args.results)
    if not runs:
        print(f"no completed runs under {args.results}", file=sys.stderr)
        return EXIT_IO
    rows, missing = summarize(runs)
    out = args.output_dir or args.results
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "compare.csv")
    columns = list(CELL_KEYS) + ["seeds", "train_loss", "test_loss", "ege", "signature", "flag"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    record = {"runs": [os.path.relpath(r["path"], args.results) for r in runs], "missing": missing}
    write_sidecar(path, record)
    table = format_table(rows)
    with open(os.path.join(out, "compare.txt"), "w") as fh:
        fh.write(table)
    if not args.no_plots:
        _figure("plot_compare", rows, os.path.join(out, "compare.png"))
    sys.stdout.write(table)
    for cell in missing:
        print("missing cell: " + " ".join(f"{k}={v}" for k, v in cell.items()), file=sys.stderr)
    if any(r["flag"] for r in rows):
        print("some cells mix runs with different settings; they are listed separately", file=sys.stderr)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults apply to missing keys)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--seed", type=int)
    common.add_argument("--layers", type=int)
    common.add_argument("--continuation-steps", dest="continuation_steps", type=int)
    common.add_argument("--loss", choices=("logcosh", "mse"))
    common.add_argument("--no-plots", dest="no_plots", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cdec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="model-based reconstruction of one test sample")
    sub.add_parser("gen-data", parents=[common], help="build and cache the data splits")
    p = sub.add_parser("train", parents=[common], help="train the unrolled decoder")
    p.add_argument("--seeds", type=int, nargs="+", help="train one run per seed in seed-<k> subdirectories")
    p.add_argument("--jobs", type=int, default=1, help="parallel seeds")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p = sub.add_parser("landscape", parents=[common], help="loss surface around a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--direction-seed", dest="direction_seed", type=int)
    p = sub.add_parser("compare", parents=[common], help="seed-averaged table over finished runs")
    p.add_argument("results")
    return parser


COMMANDS = {"solve": cmd_solve, "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "landscape": cmd_landscape, "compare": cmd_compare}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, InvalidArgument) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, TrainingError) as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except FormatError as err:
        print(f"format error: {err}", file=sys.stderr)
        return EXIT_IO
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
