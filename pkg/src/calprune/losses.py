"""Classification and auxiliary calibration losses as graph builders.

Every loss takes a log-probability node (the output of a log-softmax) plus
integer targets and returns a scalar graph node, so gradients come from the
autodiff module. Probabilities are always read back via exp() of log-softmax
output; no raw softmax of large logits anywhere.

Sign convention: the focal family is built with a leading minus so the loss
value is >= 0 and minimisation is meaningful.
"""

from dataclasses import dataclass

import numpy as np

CLASSIFICATION_KINDS = ("nll", "focal", "flsd", "brier", "label_smoothing")
AUX_KINDS = ("huber", "dca", "mdca")

FLSD_LOW_CONFIDENCE_GAMMA = 5.0
FLSD_HIGH_CONFIDENCE_GAMMA = 3.0
FLSD_THRESHOLD = 0.2


@dataclass
class AuxSpec:
    """Auxiliary calibration loss: kind, Huber transition alpha, weight lambda."""
    kind: str = "huber"
    alpha: float = 0.005
    weight: float = 10.0

    def __post_init__(self):
        if self.kind not in AUX_KINDS:
            raise ValueError(f"unknown aux loss kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError(f"aux weight must be >= 0, got {self.weight}")
        if self.kind == "huber" and self.alpha <= 0:
            raise ValueError(f"huber alpha must be > 0, got {self.alpha}")

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "weight": self.weight}


@dataclass
class LossSpec:
    """Which classification loss to train with, plus optional auxiliary term."""
    kind: str = "nll"
    gamma: float = 3.0        # focal only
    smoothing: float = 0.0    # label_smoothing only
    aux: AuxSpec = None

    def __post_init__(self):
        if self.kind not in CLASSIFICATION_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 <= self.smoothing < 1:
            raise ValueError(f"smoothing must be in [0, 1), got {self.smoothing}")

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma, "smoothing": self.smoothing,
                "aux": self.aux.to_dict() if self.aux is not None else None}


def _one_hot(targets, n_classes):
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise ValueError(f"target labels out of range for {n_classes} classes")
    out = np.zeros((targets.shape[0], n_classes))
    out[np.arange(targets.shape[0]), targets] = 1.0
    return out


def nll_loss(g, log_probs, targets):
    """Mean negative log-likelihood of the target class."""
    picked = g.gather_rows(log_probs, targets)
    return g.scale(g.mean(picked), -1.0)


def focal_loss(g, log_probs, targets, gamma):
    """Mean of -(1 - p_target)^gamma * log p_target."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    picked = g.gather_rows(log_probs, targets)
    p = g.exp(picked)
    weight = g.pow_const(g.sub(g.const(1.0), p), gamma)
    return g.scale(g.mean(g.mul(weight, picked)), -1.0)


def flsd_gamma(p_target):
    """Sample-dependent focal exponent: 5 below confidence 0.2, else 3."""
    if not 0.0 <= p_target <= 1.0:
        raise ValueError(f"p_target must be in [0, 1], got {p_target}")
    return FLSD_LOW_CONFIDENCE_GAMMA if p_target < FLSD_THRESHOLD else FLSD_HIGH_CONFIDENCE_GAMMA


def flsd_loss(g, log_probs, targets):
    """Focal loss whose gamma is recomputed per sample on every forward pass."""
    picked = g.gather_rows(log_probs, targets)
    p = g.exp(picked)
    weight = g.focal_power(g.sub(g.const(1.0), p),
                           gamma_below=FLSD_LOW_CONFIDENCE_GAMMA,
                           gamma_above=FLSD_HIGH_CONFIDENCE_GAMMA,
                           threshold=FLSD_THRESHOLD)
    return g.scale(g.mean(g.mul(weight, picked)), -1.0)


def huber_fn(g, x, alpha):
    """Huber of a scalar node: x^2/2 for |x| <= alpha, alpha*(|x| - alpha/2) outside."""
    return g.huber(x, alpha)


def huber_value(x, alpha):
    """Plain-number Huber, for tests and direct evaluation."""
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    x = float(x)
    if abs(x) <= alpha:
        return 0.5 * x * x
    return alpha * (abs(x) - 0.5 * alpha)


def _confidence_gap(g, log_probs, targets):
    # batch mean confidence minus (frozen) batch accuracy
    conf_mean = g.mean(g.exp(g.row_max(log_probs)))
    acc_mean = g.stop_gradient(g.mean(g.correct_indicator(log_probs, targets)))
    return g.sub(conf_mean, acc_mean)


def aux_huber_loss(g, log_probs, targets, alpha):
    """Huber of (mean confidence - mean accuracy) over the batch.

    The accuracy mean is frozen through stop-gradient: the correctness
    indicator is piecewise constant, so only the confidences carry gradient.
    """
    return g.huber(_confidence_gap(g, log_probs, targets), alpha)


def dca_aux_loss(g, log_probs, targets):
    """Absolute confidence-accuracy gap (L1 analogue of the Huber term)."""
    return g.absolute(_confidence_gap(g, log_probs, targets))


def mdca_aux_loss(g, log_probs, targets, n_classes):
    """Classwise mean |mean predicted probability - empirical label frequency|."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape[0] == 0:
        raise ValueError("mdca_aux_loss requires a nonempty batch")
    freq = np.bincount(targets, minlength=n_classes) / targets.shape[0]
    class_mean = g.mean(g.exp(log_probs))
    gap = g.sub(class_mean, g.stop_gradient(g.const(freq)))
    return g.mean(g.absolute(gap))


def brier_loss(g, log_probs, targets, n_classes):
    """Squared error against the one-hot target, summed over classes, batch mean."""
    onehot = _one_hot(targets, n_classes)
    diff = g.sub(g.exp(log_probs), g.const(onehot))
    return g.scale(g.sum(g.pow_const(diff, 2.0)), 1.0 / onehot.shape[0])


def label_smoothing_loss(g, log_probs, targets, smoothing, n_classes):
    """Cross-entropy against (1 - eps) on the true class, eps/(K-1) elsewhere."""
    if not 0 <= smoothing < 1:
        raise ValueError(f"smoothing must be in [0, 1), got {smoothing}")
    onehot = _one_hot(targets, n_classes)
    soft = (1.0 - smoothing) * onehot + smoothing / (n_classes - 1) * (1.0 - onehot)
    return g.scale(g.sum(g.mul(g.const(soft), log_probs)), -1.0 / onehot.shape[0])


def classification_loss(g, log_probs, targets, spec, n_classes):
    if spec.kind == "nll":
        return nll_loss(g, log_probs, targets)
    if spec.kind == "focal":
        return focal_loss(g, log_probs, targets, spec.gamma)
    if spec.kind == "flsd":
        return flsd_loss(g, log_probs, targets)
    if spec.kind == "brier":
        return brier_loss(g, log_probs, targets, n_classes)
    if spec.kind == "label_smoothing":
        return label_smoothing_loss(g, log_probs, targets, spec.smoothing, n_classes)
    raise ValueError(f"unknown loss kind {spec.kind!r}")


def aux_loss(g, log_probs, targets, aux, n_classes):
    if aux.kind == "huber":
        return aux_huber_loss(g, log_probs, targets, aux.alpha)
    if aux.kind == "dca":
        return dca_aux_loss(g, log_probs, targets)
    if aux.kind == "mdca":
        return mdca_aux_loss(g, log_probs, targets, n_classes)
    raise ValueError(f"unknown aux loss kind {aux.kind!r}")


def total_loss(g, log_probs, targets, spec, n_classes):
    """Classification loss plus weight * auxiliary loss.

    A zero weight (or no aux spec) builds the classification loss alone, so
    the degenerate case is bitwise identical to the plain loss.
    """
    cls = classification_loss(g, log_probs, targets, spec, n_classes)
    if spec.aux is None or spec.aux.weight == 0:
        return cls
    aux = aux_loss(g, log_probs, targets, spec.aux, n_classes)
    return g.add(cls, g.scale(aux, spec.aux.weight))
