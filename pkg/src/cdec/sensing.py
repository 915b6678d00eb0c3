"""Measurement ensembles, analysis-operator initialisation and datasets.

Signals are stored row-wise: a dataset of ``count`` images of dimension ``n``
is an array of shape ``(count, n)``.
"""
import glob
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidArgument

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CACHE_MAGIC = 0x31534443  # b"CDS1" little-endian

# Beta(2, 2) for the analysis operator: symmetric, zero mean after the shift.
BETA_A = 2.0
BETA_B = 2.0


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gaussian_measurement_matrix(m, n, seed):
    """i.i.d. standard normal ``m x n`` matrix scaled by ``1/sqrt(m)``."""
    if not 0 < m < n:
        raise InvalidArgument(f"need 0 < m < n, got m={m}, n={n}")
    return _rng(seed).standard_normal((m, n)) / np.sqrt(m)


def measure(x, A, noise_std, seed):
    """Noisy measurements of one signal (1-D) or a stack of signals (2-D, row-wise).

    Returns ``(y, eps)`` where ``eps`` is the l2 norm of the realised noise, i.e.
    ``||y - A x||_2``, so the true signal sits on the boundary of the feasible set.
    """
    x = np.asarray(x, dtype=float)
    A = np.asarray(A, dtype=float)
    if noise_std < 0:
        raise InvalidArgument("noise_std must be nonnegative")
    if x.shape[-1] != A.shape[1]:
        raise InvalidArgument(f"signal dimension {x.shape[-1]} does not match A with {A.shape[1]} columns")
    clean = x @ A.T
    if noise_std == 0:
        noise = np.zeros_like(clean)
    else:
        noise = noise_std * _rng(seed).standard_normal(clean.shape)
    y = clean + noise
    eps = np.linalg.norm(y - clean, axis=-1)
    return y, eps


def default_x0(A, y):
    """Initial guess ``A^T y`` (row-wise for stacked measurements)."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != A.shape[0]:
        raise InvalidArgument(f"measurement dimension {y.shape[-1]} does not match A with {A.shape[0]} rows")
    return y @ A


def init_analysis_operator(N, n, seed):
    """Redundant ``N x n`` analysis operator with centred Beta entries scaled by ``1/sqrt(N)``."""
    if N <= n:
        raise InvalidArgument(f"analysis operator must be redundant (N > n), got N={N}, n={n}")
    draws = _rng(seed).beta(BETA_A, BETA_B, size=(N, n))
    return (draws - BETA_A / (BETA_A + BETA_B)) / np.sqrt(N)


def spectral_norm_estimate(M, iterations=1000, tol=1e-12, seed=0):
    """Largest singular value of ``M`` by power iteration on ``M^T M``."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        raise InvalidArgument("empty matrix")
    v = _rng(seed).standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iterations):
        w = M.T @ (M @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        estimate = np.sqrt(norm)
        if abs(estimate - sigma) <= tol * max(estimate, 1.0):
            sigma = estimate
            break
        sigma = estimate
    return float(np.linalg.norm(M @ v))


@dataclass(frozen=True)
class Dataset:
    """Signals with their measurements, noise bounds and initial guesses.

    ``eps`` and ``x0`` are computed once when the dataset is built and never
    change afterwards.
    """

    x: np.ndarray
    y: np.ndarray
    eps: np.ndarray
    x0: np.ndarray
    split: str = "train"

    def __post_init__(self):
        count, n = self.x.shape
        if self.y.ndim != 2 or self.y.shape[0] != count:
            raise InvalidArgument("x and y must hold the same number of samples")
        if self.eps.shape != (count,) or self.x0.shape != (count, n):
            raise InvalidArgument("eps and x0 do not match the signals")
        for arr in (self.x, self.y, self.eps, self.x0):
            arr.setflags(write=False)

    def __len__(self):
        return self.x.shape[0]

    @property
    def n(self):
        return self.x.shape[1]

    @property
    def m(self):
        return self.y.shape[1]

    def subset(self, index, split=None):
        index = np.asarray(index, dtype=int)
        return Dataset(
            self.x[index].copy(), self.y[index].copy(), self.eps[index].copy(),
            self.x0[index].copy(), split or self.split,
        )


def build_dataset(signals, A, noise_std, seed, split="train"):
    """Measure every row of ``signals`` and freeze ``eps`` and ``x0 = A^T y``."""
    signals = np.array(signals, dtype=float)
    if signals.ndim != 2 or len(signals) == 0:
        raise InvalidArgument("signals must be a non-empty 2-D array")
    y, eps = measure(signals, A, noise_std, seed)
    return Dataset(signals, y, eps, default_x0(A, y), split)


def synthetic_sparse_signals(n, sparsity, count, seed):
    """Rows with exactly ``sparsity`` standard-normal nonzeros at random positions."""
    if not 0 < sparsity <= n:
        raise InvalidArgument(f"need 0 < sparsity <= n, got sparsity={sparsity}, n={n}")
    rng = _rng(seed)
    x = np.zeros((count, n))
    for row in x:
        support = rng.choice(n, size=sparsity, replace=False)
        values = rng.standard_normal(sparsity)
        # an exact zero draw would break the support count
        values[values == 0.0] = 1.0
        row[support] = values
    return x


def synthetic_sparse_dataset(n, sparsity, count, seed, A, noise_std=0.0, split="train"):
    rng = _rng(seed)
    signals = synthetic_sparse_signals(n, sparsity, count, rng)
    return build_dataset(signals, A, noise_std, rng, split)


def _downsample(images, factor):
    if factor == 1:
        return images
    count, rows, cols = images.shape
    if rows % factor or cols % factor:
        raise InvalidArgument(f"image size {rows}x{cols} not divisible by downsample factor {factor}")
    pooled = images.reshape(count, rows // factor, factor, cols // factor, factor)
    return pooled.mean(axis=(2, 4))


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path):
    """Raw unsigned-byte tensor from an IDX file (optionally gzipped)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError("file too short for IDX magic", offset=len(raw))
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08 or ndim not in (1, 3):
        raise FormatError(f"bad IDX magic 0x{struct.unpack('>I', raw[:4])[0]:08x}", offset=0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError("truncated IDX dimension header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) < expected:
        raise FormatError(f"truncated IDX payload, expected {expected} bytes", offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=expected - header, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    magic = IDX_IMAGES_MAGIC if array.ndim == 3 else IDX_LABELS_MAGIC
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_idx_images(path, downsample=1, limit=None):
    """Images from an IDX file as rows scaled to [0, 1], row-major vectorised."""
    images = read_idx(path)
    if images.ndim != 3:
        raise FormatError("IDX file holds labels, not images", offset=0)
    if limit is not None:
        images = images[:limit]
    images = _downsample(images.astype(float) / 255.0, downsample)
    return images.reshape(len(images), -1)


def load_png_grayscale(path_glob, downsample=1):
    """Grayscale rows from every image matching ``path_glob`` (sorted by name)."""
    from PIL import Image

    paths = sorted(glob.glob(path_glob))
    if not paths:
        raise FormatError(f"no images match {path_glob!r}")
    images = []
    for path in paths:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=float) / 255.0
        if images and rgb.shape != images[0].shape:
            raise FormatError(f"{path} is {rgb.shape[1]}x{rgb.shape[0]}, expected "
                              f"{images[0].shape[1]}x{images[0].shape[0]}")
        images.append(rgb)
    stack = np.stack(images)
    gray = 0.299 * stack[..., 0] + 0.587 * stack[..., 1] + 0.114 * stack[..., 2]
    gray = _downsample(gray, downsample)
    return gray.reshape(len(gray), -1)


def save_cache(path, dataset):
    """Write a dataset as ``<IIII`` header (magic, n, m, count) plus float64 rows.

    Each row is ``x (n) | y (m) | eps (1) | x0 (n)``, little-endian.
    """
    body = np.hstack([dataset.x, dataset.y, dataset.eps[:, None], dataset.x0])
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IIII", CACHE_MAGIC, dataset.n, dataset.m, len(dataset)))
        fh.write(body.astype("<f8").tobytes())


def load_cache(path, split="train"):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise FormatError("file too short for dataset header", offset=len(raw))
    magic, n, m, count = struct.unpack("<IIII", raw[:16])
    if magic != CACHE_MAGIC:
        raise FormatError(f"bad dataset magic 0x{magic:08x}", offset=0)
    width = 2 * n + m + 1
    if len(raw) != 16 + 8 * width * count:
        raise FormatError(f"dataset payload should be {8 * width * count} bytes", offset=len(raw))
    body = np.frombuffer(raw, dtype="<f8", offset=16).reshape(count, width).astype(float)
    return Dataset(body[:, :n].copy(), body[:, n:n + m].copy(), body[:, n + m].copy(),
                   body[:, n + m + 1:].copy(), split)
