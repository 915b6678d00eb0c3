"""From a resolved config to data splits, measurement matrix and decoder.

Runs that share a root seed share signals, A, noise and the initial W, so
configurations that differ only in J, L or the loss form paired comparisons.
"""
import os
from dataclasses import dataclass

import numpy as np

from .config import ConfigError
from .errors import FormatError
from .sensing import (build_dataset, gaussian_measurement_matrix, init_analysis_operator,
                      load_cache, load_idx_images, load_png_grayscale, synthetic_sparse_signals)
from .train import Splits
from .unfolded import make_decoder

CACHE_FILES = {"train": "train.bin", "val": "val.bin", "test": "test.bin"}
MATRIX_FILE = "A.npy"


@dataclass
class Experiment:
    splits: Splits
    A: np.ndarray

    @property
    def n(self):
        return self.A.shape[1]


def load_signals(cfg):
    """Rows of ground-truth signals (train pool first, then test)."""
    d = cfg.data
    total = d.train + d.test
    rng = cfg.rng("data")
    if d.source == "synthetic":
        return synthetic_sparse_signals(d.n, d.sparsity, total, rng)
    if d.source == "idx":
        images = load_idx_images(d.path, d.downsample)
    else:
        images = load_png_grayscale(d.path, d.downsample)
    if len(images) < total:
        raise ConfigError(f"[data] path: {d.path} holds {len(images)} images, need {total}")
    return images[rng.permutation(len(images))[:total]]


def build_experiment(cfg):
    if cfg.data.source == "cache":
        return load_experiment(cfg.data.path)
    signals = load_signals(cfg)
    n = signals.shape[1]
    m = max(1, int(round(cfg.sensing.m_ratio * n)))
    A = gaussian_measurement_matrix(m, n, cfg.rng("sensing"))
    full = build_dataset(signals, A, cfg.sensing.noise_std, cfg.rng("noise"))
    d = cfg.data
    n_val = max(1, int(round(d.val_fraction * d.train)))
    if n_val >= d.train:
        raise ConfigError("[data] train: too few samples to carve a validation split")
    idx = np.arange(d.train + d.test)
    splits = Splits(
        train=full.subset(idx[:d.train - n_val], "train"),
        val=full.subset(idx[d.train - n_val:d.train], "val"),
        test=full.subset(idx[d.train:], "test"),
    )
    return Experiment(splits, A)


def load_experiment(directory):
    """Splits and A written by ``save_experiment``."""
    try:
        A = np.load(os.path.join(directory, MATRIX_FILE))
    except (OSError, ValueError) as err:
        raise FormatError(f"cannot read measurement matrix in {directory}: {err}") from None
    parts = {name: load_cache(os.path.join(directory, fname), name) for name, fname in CACHE_FILES.items()}
    for part in parts.values():
        if (part.m, part.n) != A.shape:
            raise FormatError(f"cached split in {directory} does not match A {A.shape}")
    return Experiment(Splits(**parts), A)


def save_experiment(directory, experiment):
    from .sensing import save_cache

    paths = []
    for name, fname in CACHE_FILES.items():
        path = os.path.join(directory, fname)
        save_cache(path, getattr(experiment.splits, name))
        paths.append(path)
    path = os.path.join(directory, MATRIX_FILE)
    np.save(path, experiment.A)
    paths.append(path)
    return paths


def initial_decoder(cfg, experiment):
    n = experiment.n
    W0 = init_analysis_operator(cfg.model.n_multiplier * n, n, cfg.rng("init"))
    return make_decoder(cfg.model.layers, W0, experiment.A, cfg.model.mu, cfg.model.prox,
                        cfg.model.t1, cfg.model.t2)
