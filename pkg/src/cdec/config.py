"""Experiment configuration: INI-style ``key = value`` files with ``[section]`` headers.

Every key has a default, so an empty file is a valid (synthetic) experiment.
Overrides use ``section.key=value``.
"""
import configparser
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .train import TrainConfig

SOURCES = ("synthetic", "idx", "png", "cache")

# one generator per consumer, all derived from the root seed
CONSUMERS = {"data": 0, "sensing": 1, "noise": 2, "init": 3, "shuffle": 4, "directions": 5}

DEFAULTS = {
    "data": {
        "source": "synthetic",
        "path": "",
        "downsample": "1",
        "n": "64",
        "sparsity": "4",
        "train": "1000",
        "test": "200",
        "val_fraction": "0.1",
    },
    "sensing": {"m_ratio": "0.25", "noise_std": "1e-4"},
    "model": {
        "layers": "5",
        "continuation_steps": "1",
        "n_multiplier": "10",
        "mu": "1.0",
        "prox": "conic",
        "t1": "",
        "t2": "",
    },
    "train": {
        "batch_size": "128",
        "learning_rate": "1e-3",
        "max_epochs": "100",
        "patience": "10",
        "loss": "logcosh",
    },
    "solve": {"max_iters": "500", "rel_tol": "0", "sample": "0", "analysis": "identity"},
    "landscape": {"points": "25", "span": "1.0", "samples": "256", "split": "test"},
    "run": {"seed": "0", "output_dir": "runs"},
}


class ConfigError(ValueError):
    """Unreadable or invalid configuration; carries the offending location."""


@dataclass(frozen=True)
class DataSpec:
    source: str
    path: str
    downsample: int
    n: int
    sparsity: int
    train: int
    test: int
    val_fraction: float


@dataclass(frozen=True)
class SensingSpec:
    m_ratio: float
    noise_std: float


@dataclass(frozen=True)
class ModelSpec:
    layers: int
    continuation_steps: int
    n_multiplier: int
    mu: float
    prox: str
    t1: float = None
    t2: float = None


@dataclass(frozen=True)
class SolveSpec:
    max_iters: int
    rel_tol: float
    sample: int
    analysis: str


@dataclass(frozen=True)
class LandscapeSpec:
    points: int
    span: float
    samples: int
    split: str


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSpec
    sensing: SensingSpec
    model: ModelSpec
    train: TrainConfig
    solve: SolveSpec
    landscape: LandscapeSpec
    seed: int
    output_dir: str

    def as_dict(self):
        return asdict(self)

    def rng(self, consumer):
        """Generator for one consumer of randomness, split from the root seed."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, CONSUMERS[consumer]]))

    @property
    def m(self):
        return max(1, int(round(self.sensing.m_ratio * self.data.n)))


def _line_of(text, section, key):
    current = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"\[(.+)\]", stripped)
        if header:
            current = header.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped):
            return number
    return None


class _Reader:
    def __init__(self, parser, text, source):
        self.parser = parser
        self.text = text
        self.source = source

    def fail(self, section, key, message):
        line = _line_of(self.text, section, key)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: [{section}] {key}: {message}")

    def get(self, section, key, kind, check=None, optional=False):
        raw = self.parser.get(section, key).strip()
        if optional and raw == "":
            return None
        try:
            value = kind(raw)
        except ValueError:
            self.fail(section, key, f"expected {kind.__name__}, got {raw!r}")
        if check is not None:
            problem = check(value)
            if problem:
                self.fail(section, key, problem)
        return value


def _positive(v):
    return None if v > 0 else "must be positive"


def _nonneg(v):
    return None if v >= 0 else "must be nonnegative"


def _one_of(options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"
    return check


def load_config(path=None, overrides=(), text=None):
    """Parse a config file (or ``text``) and apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(DEFAULTS)
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"{path}: cannot read config: {err.strerror}") from None
    text = text or ""
    try:
        parser.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(f"{source}: {err}") from None
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{source}:{_line_of(text, section, '') or '?'}: unknown section [{section}]")
        for key in parser[section]:
            if key not in DEFAULTS[section]:
                line = _line_of(text, section, key)
                raise ConfigError(f"{source}:{line or '?'}: [{section}] unknown key {key!r}")
    for item in overrides:
        match = re.fullmatch(r"\s*(\w+)\.(\w+)\s*=(.*)", item)
        if not match or match.group(1) not in DEFAULTS or match.group(2) not in DEFAULTS[match.group(1)]:
            raise ConfigError(f"--set {item!r}: expected section.key=value with a known key")
        parser.set(match.group(1), match.group(2), match.group(3).strip())
    return _build(_Reader(parser, text, source))


def _build(r):
    data = DataSpec(
        source=r.get("data", "source", str, _one_of(SOURCES)),
        path=r.get("data", "path", str),
        downsample=r.get("data", "downsample", int, _positive),
        n=r.get("data", "n", int, _positive),
        sparsity=r.get("data", "sparsity", int, _positive),
        train=r.get("data", "train", int, _positive),
        test=r.get("data", "test", int, _positive),
        val_fraction=r.get("data", "val_fraction", float,
                           lambda v: None if 0 < v < 1 else "must lie in (0, 1)"),
    )
    if data.source != "synthetic":
        if not data.path:
            r.fail("data", "path", f"required for source {data.source!r}")
        if data.source != "png" and not Path(data.path).exists():
            r.fail("data", "path", f"no such file: {data.path}")
    elif data.sparsity > data.n:
        r.fail("data", "sparsity", "cannot exceed n")
    sensing = SensingSpec(
        m_ratio=r.get("sensing", "m_ratio", float, lambda v: None if 0 < v < 1 else "must lie in (0, 1)"),
        noise_std=r.get("sensing", "noise_std", float, _nonneg),
    )
    model = ModelSpec(
        layers=r.get("model", "layers", int, _positive),
        continuation_steps=r.get("model", "continuation_steps", int, _positive),
        n_multiplier=r.get("model", "n_multiplier", int,
                           lambda v: None if v >= 2 else "must be at least 2 (redundant operator)"),
        mu=r.get("model", "mu", float, _positive),
        prox=r.get("model", "prox", str, _one_of(("conic", "listing"))),
        t1=r.get("model", "t1", float, _positive, optional=True),
        t2=r.get("model", "t2", float, _positive, optional=True),
    )
    seed = r.get("run", "seed", int, _nonneg)
    train = TrainConfig(
        batch_size=r.get("train", "batch_size", int, _positive),
        learning_rate=r.get("train", "learning_rate", float, _positive),
        max_epochs=r.get("train", "max_epochs", int, _nonneg),
        early_stop_patience=r.get("train", "patience", int, _positive),
        loss=r.get("train", "loss", str, _one_of(("logcosh", "mse"))),
        J=model.continuation_steps,
        seed=int(np.random.SeedSequence([seed, CONSUMERS["shuffle"]]).generate_state(1)[0]),
    )
    solve = SolveSpec(
        max_iters=r.get("solve", "max_iters", int, _positive),
        rel_tol=r.get("solve", "rel_tol", float, _nonneg),
        sample=r.get("solve", "sample", int, _nonneg),
        analysis=r.get("solve", "analysis", str, _one_of(("identity", "init"))),
    )
    landscape = LandscapeSpec(
        points=r.get("landscape", "points", int, lambda v: None if v >= 3 else "need at least 3 points"),
        span=r.get("landscape", "span", float, _positive),
        samples=r.get("landscape", "samples", int, _positive),
        split=r.get("landscape", "split", str, _one_of(("train", "val", "test"))),
    )
    return ExperimentConfig(data, sensing, model, train, solve, landscape, seed,
                            r.get("run", "output_dir", str))
