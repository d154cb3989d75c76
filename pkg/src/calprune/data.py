"""Synthetic dataset generation, IDX/CSV ingestion, splitting, minibatching.

All randomness flows through numpy's PCG64 (np.random.default_rng seeded via
SeedSequence), so every dataset, split and shuffle is reproducible from the
integers that seed it. The Gaussian mixture places class means on a circle of
radius 3 with isotropic unit covariance, which keeps the Bayes-optimal
posterior available in closed form.
"""

import csv
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .pruning import ScoredDataset

MIXTURE_RADIUS = 3.0

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledData:
    x: np.ndarray
    y: np.ndarray
    n_classes: int
    ids: np.ndarray = None  # original row ids, set by stratified_split

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ValueError(f"inconsistent shapes x={self.x.shape} y={self.y.shape}")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("features must be finite")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels out of range for {self.n_classes} classes")

    def __len__(self):
        return self.x.shape[0]


def mixture_means(n_classes):
    """Class means evenly spaced on a circle of radius 3 in the plane."""
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    return MIXTURE_RADIUS * np.column_stack([np.cos(angles), np.sin(angles)])


def generate_gaussian_mixture(n_classes, per_class, noise=0.0, seed=0):
    """Labeled 2-d points from K unit-covariance Gaussians, optional label flips.

    Points and flip decisions come from separate child seeds, so the same
    seed yields identical point clouds at every noise level. A flipped label
    moves to a uniformly random other class.
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    sizes = [per_class] * n_classes if np.isscalar(per_class) else list(per_class)
    if len(sizes) != n_classes or any(s <= 0 for s in sizes):
        raise ValueError(f"per-class sizes must be {n_classes} positive ints, got {sizes}")
    if not 0 <= noise < 0.5:
        raise ValueError(f"label-flip probability must be in [0, 0.5), got {noise}")
    point_seed, flip_seed = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(point_seed)
    means = mixture_means(n_classes)
    parts, labels = [], []
    for k, size in enumerate(sizes):
        parts.append(rng.normal(loc=means[k], scale=1.0, size=(size, 2)))
        labels.append(np.full(size, k, dtype=np.int64))
    x = np.concatenate(parts)
    y = np.concatenate(labels)
    flip_rng = np.random.default_rng(flip_seed)
    u = flip_rng.random(len(y))
    offsets = flip_rng.integers(1, n_classes, size=len(y))
    flip = u < noise
    y[flip] = (y[flip] + offsets[flip]) % n_classes
    return LabeledData(x, y, n_classes)


def mixture_posterior(x, n_classes, per_class, noise=0.0):
    """Exact class posterior of the generator, including the label-flip channel."""
    x = np.asarray(x, dtype=np.float64)
    sizes = np.asarray([per_class] * n_classes if np.isscalar(per_class) else per_class,
                       dtype=np.float64)
    prior = sizes / sizes.sum()
    means = mixture_means(n_classes)
    sq = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    log_post = np.log(prior) - 0.5 * sq
    log_post -= log_post.max(axis=1, keepdims=True)
    clean = np.exp(log_post)
    clean /= clean.sum(axis=1, keepdims=True)
    return (1.0 - noise) * clean + noise * (1.0 - clean) / (n_classes - 1)


def _read_exact(fh, n, path, what, offset):
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(
            f"{path}: truncated {what}: expected {n} bytes at offset {offset}, got {len(data)}")
    return data


def load_idx_pair(images_path, labels_path):
    """Big-endian IDX image/label pair; pixels scaled to [0, 1] and flattened."""
    with open(images_path, "rb") as fh:
        header = _read_exact(fh, 16, images_path, "image header", 0)
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(
                f"{images_path}: expected image magic 0x{IDX_IMAGES_MAGIC:08x} at offset 0, "
                f"found 0x{magic:08x}")
        payload = _read_exact(fh, count * rows * cols, images_path, "pixel data", 16)
        pixels = np.frombuffer(payload, dtype=np.uint8)
    with open(labels_path, "rb") as fh:
        header = _read_exact(fh, 8, labels_path, "label header", 0)
        magic, label_count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(
                f"{labels_path}: expected label magic 0x{IDX_LABELS_MAGIC:08x} at offset 0, "
                f"found 0x{magic:08x}")
        labels = np.frombuffer(
            _read_exact(fh, label_count, labels_path, "label data", 8), dtype=np.uint8)
    if count != label_count:
        raise ValueError(
            f"count mismatch: {images_path} holds {count} images but "
            f"{labels_path} holds {label_count} labels")
    x = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0
    y = labels.astype(np.int64)
    return LabeledData(x, y, int(y.max()) + 1 if count else 2)


def load_csv(path, label_column, n_classes=None):
    """Rectangular numeric CSV with a header; one integer-valued label column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r} in header {header}")
        label_idx = header.index(label_column)
        feature_idx = [i for i in range(len(header)) if i != label_idx]
        features, labels = [], []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {row_no} has {len(row)} cells, header has {len(header)}")
            values = []
            for col, cell in enumerate(row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric cell {cell!r} at row {row_no}, "
                        f"column {header[col]!r}") from None
            label = values[label_idx]
            if label != int(label):
                raise ValueError(
                    f"{path}: label {label} at row {row_no} is not integer-valued")
            labels.append(int(label))
            features.append([values[i] for i in feature_idx])
    if not labels:
        raise ValueError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64)
    if y.min() < 0:
        raise ValueError(f"{path}: negative label {y.min()}")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    elif y.max() >= n_classes:
        raise ValueError(
            f"{path}: label {int(y.max())} out of range for declared {n_classes} classes")
    return LabeledData(np.asarray(features, dtype=np.float64), y, n_classes)


def stratified_split(data, train_fraction, seed):
    """Per-class seeded shuffle, then a floor(train_fraction * n_k) split.

    Returns (train as a ScoredDataset with ema=0, validation). Original row
    ids are preserved on both sides; the floor uses exact rational arithmetic
    over the double value of train_fraction.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    train_parts, val_parts = [], []
    for k in range(data.n_classes):
        positions = np.flatnonzero(data.y == k)
        if positions.size < 2:
            raise ValueError(f"class {k} has {positions.size} instance(s); need >= 2 to split")
        shuffled = positions[rng.permutation(positions.size)]
        take = int(Fraction(train_fraction) * positions.size)
        train_parts.append(shuffled[:take])
        val_parts.append(shuffled[take:])
    train_idx = np.concatenate(train_parts)
    val_idx = np.concatenate(val_parts)
    train = ScoredDataset(data.x[train_idx], data.y[train_idx],
                          np.zeros(len(train_idx)), train_idx.astype(np.int64),
                          data.n_classes)
    val = LabeledData(data.x[val_idx], data.y[val_idx], data.n_classes,
                      ids=val_idx.astype(np.int64))
    return train, val


def minibatches(dataset, batch_size, epoch, seed):
    """Seeded permutation of the dataset cut into consecutive index blocks.

    The permutation is seeded by the (seed, epoch) pair; the final partial
    block is kept.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    n = len(dataset)
    perm = np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]
