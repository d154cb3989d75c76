"""EMA confidence tracking and classwise low-confidence pruning.

Every training instance carries an exponentially smoothed confidence score
e <- factor * c + (1 - factor) * e (starting from 0). At scheduled epochs the
lowest-scored fraction of each class is removed; pruned instances never
return. All operations are pure: they return new datasets.
"""

import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass
class ScoredDataset:
    """Instances with labels, per-instance EMA scores, and stable original ids."""
    x: np.ndarray
    y: np.ndarray
    ema: np.ndarray
    ids: np.ndarray
    n_classes: int

    def __post_init__(self):
        n = self.x.shape[0]
        if not (self.y.shape == self.ema.shape == self.ids.shape == (n,)):
            raise ValueError("x, y, ema, ids lengths disagree")
        if n and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels out of range for {self.n_classes} classes")
        if n and (self.ema.min() < 0 or self.ema.max() > 1):
            raise ValueError("ema scores must lie in [0, 1]")
        if len(np.unique(self.ids)) != n:
            raise ValueError("original ids must be unique")

    def __len__(self):
        return self.x.shape[0]

    def class_sizes(self):
        return np.bincount(self.y, minlength=self.n_classes)


@dataclass
class PruneSchedule:
    """When and how hard to prune: fraction, EMA factor, epochs, warmup gate."""
    percent: float
    ema_factor: float = 0.3
    interval: int = 5
    epochs: frozenset = None
    warmup_epochs: int = 0

    def __post_init__(self):
        if not 0 < self.percent < 100:
            raise ValueError(f"prune percent must be in (0, 100), got {self.percent}")
        if not 0 <= self.ema_factor <= 1:
            raise ValueError(f"ema factor must be in [0, 1], got {self.ema_factor}")
        if (self.interval is None) == (self.epochs is None):
            raise ValueError("exactly one of interval/epochs must be set")
        if self.interval is not None and self.interval < 1:
            raise ValueError(f"prune interval must be >= 1, got {self.interval}")
        if self.epochs is not None:
            self.epochs = frozenset(int(e) for e in self.epochs)
            if any(e < 1 for e in self.epochs):
                raise ValueError("prune epochs must be >= 1")
        if self.warmup_epochs < 0:
            raise ValueError(f"warmup epochs must be >= 0, got {self.warmup_epochs}")

    def to_dict(self):
        return {
            "percent": self.percent,
            "ema_factor": self.ema_factor,
            "interval": self.interval,
            "epochs": sorted(self.epochs) if self.epochs is not None else None,
            "warmup_epochs": self.warmup_epochs,
        }


def prune_count(percent, n):
    """floor(percent/100 * n), evaluated in exact rational arithmetic.

    Fraction(percent) is the exact rational value of the IEEE double, so e.g.
    percent=30, n=10 yields 3 rather than the float artifact floor(2.999...).
    """
    return int(Fraction(percent) * n / 100)


def update_ema(dataset, confidences, ema_factor):
    """Blend this epoch's confidences into every instance's EMA score.

    `confidences` maps original id -> confidence in [0, 1]; a surviving
    instance without an entry is an error.
    """
    if not 0 <= ema_factor <= 1:
        raise ValueError(f"ema factor must be in [0, 1], got {ema_factor}")
    if ema_factor == 0:
        warnings.warn("ema factor 0 keeps all scores frozen forever", stacklevel=2)
    conf = np.empty(len(dataset))
    for row, original_id in enumerate(dataset.ids):
        try:
            c = confidences[int(original_id)]
        except KeyError:
            raise ValueError(f"no confidence recorded for surviving id {original_id}") from None
        if not 0 <= c <= 1:
            raise ValueError(f"confidence {c} for id {original_id} outside [0, 1]")
        conf[row] = c
    new_ema = ema_factor * conf + (1.0 - ema_factor) * dataset.ema
    return ScoredDataset(dataset.x, dataset.y, new_ema, dataset.ids, dataset.n_classes)


def prune_using_ema(dataset, percent):
    """Remove the lowest-EMA percent of each class (ties: lowest original id first).

    Survivors keep their relative order within a class; classes are
    concatenated in ascending index order. Surviving EMA scores are untouched.
    """
    if not 0 < percent < 100:
        raise ValueError(f"prune percent must be in (0, 100), got {percent}")
    keep_parts = []
    for k in range(dataset.n_classes):
        positions = np.flatnonzero(dataset.y == k)
        if positions.size == 0:
            raise ValueError(f"class {k} has no instances to prune from")
        removed = prune_count(percent, positions.size)
        order = np.lexsort((dataset.ids[positions], dataset.ema[positions]))
        victims = positions[order[:removed]]
        keep_parts.append(np.setdiff1d(positions, victims))
    keep = np.concatenate(keep_parts)
    return ScoredDataset(dataset.x[keep], dataset.y[keep], dataset.ema[keep],
                         dataset.ids[keep], dataset.n_classes)


def should_prune(epoch, schedule):
    """True iff `epoch` is a scheduled prune epoch at or past the warmup gate."""
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if epoch < schedule.warmup_epochs:
        return False
    if schedule.interval is not None:
        return epoch % schedule.interval == 0
    return epoch in schedule.epochs
