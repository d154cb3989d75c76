"""Binned calibration metrics, high-confidence subsets, refinement AUROC.

Bin convention: M equispaced bins over (0, 1], bin m covering
((m-1)/M, m/M], with confidence exactly 0 assigned to the first bin.
Bin membership is decided by direct comparison against the float64 edges
m/M, so an O(n*M) re-binning oracle using the same edge values agrees
exactly.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalRecord:
    confidence: float
    correct: bool
    predicted: int
    label: int

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if bool(self.correct) != (self.predicted == self.label):
            raise ValueError("correct flag disagrees with predicted/label pair")


@dataclass
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    confidence: float   # None when the bin is empty
    accuracy: float     # None when the bin is empty


@dataclass
class SubsetCalibration:
    """Calibration restricted to records with confidence >= delta."""
    delta: float
    count: int
    fraction_pct: float
    ece: float          # None when the subset is empty
    empty: bool


@dataclass
class CalibrationReport:
    n: int
    n_bins: int
    bins: list
    ece: float
    subsets: list
    test_error_pct: float
    auroc: float        # None when all records are correct or all incorrect


def _arrays(records):
    conf = np.array([r.confidence for r in records], dtype=np.float64)
    correct = np.array([r.correct for r in records], dtype=np.float64)
    return conf, correct


def bin_edges(n_bins):
    return np.arange(1, n_bins + 1) / n_bins


def bin_indices(confidences, n_bins):
    """Index of the first edge m/M that is >= c; c=0 lands in bin 0."""
    return np.searchsorted(bin_edges(n_bins), confidences, side="left")


def binned_ece(records, n_bins):
    """Equispaced-bin reliability table and its expected calibration error."""
    if n_bins < 1:
        raise ValueError(f"need at least 1 bin, got {n_bins}")
    if not records:
        raise ValueError("binned_ece requires at least one record")
    conf, correct = _arrays(records)
    idx = bin_indices(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sums = np.bincount(idx, weights=conf, minlength=n_bins)
    correct_sums = np.bincount(idx, weights=correct, minlength=n_bins)
    edges = bin_edges(n_bins)
    n = len(records)
    bins = []
    ece = 0.0
    for m in range(n_bins):
        lower = 0.0 if m == 0 else edges[m - 1]
        if counts[m] == 0:
            bins.append(ReliabilityBin(lower, edges[m], 0, None, None))
            continue
        mean_conf = conf_sums[m] / counts[m]
        accuracy = correct_sums[m] / counts[m]
        bins.append(ReliabilityBin(lower, edges[m], int(counts[m]),
                                   float(mean_conf), float(accuracy)))
        ece += counts[m] / n * abs(accuracy - mean_conf)
    return bins, float(ece)


def high_confidence_subset(records, delta):
    """Records with confidence >= delta, plus the subset size as a percentage."""
    if not 0 < delta <= 1:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    subset = [r for r in records if r.confidence >= delta]
    fraction_pct = 100.0 * len(subset) / len(records) if records else 0.0
    return subset, fraction_pct


def ece_on_subset(records, delta, n_bins):
    """Binned ECE restricted to the high-confidence subset.

    An empty subset is reported with ece=None and empty=True rather than a
    silent zero.
    """
    subset, fraction_pct = high_confidence_subset(records, delta)
    if not subset:
        return SubsetCalibration(delta, 0, fraction_pct, None, True)
    _, ece = binned_ece(subset, n_bins)
    return SubsetCalibration(delta, len(subset), fraction_pct, ece, False)


def refinement_auroc(records):
    """P(random correct record outranks a random incorrect one), ties counted 1/2.

    Returns None when the ranking is undefined (all correct or all incorrect).
    """
    conf, correct = _arrays(records)
    n_pos = int(correct.sum())
    n_neg = len(records) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(conf, kind="mergesort")
    ranks = np.empty(len(records))
    sorted_conf = conf[order]
    i = 0
    while i < len(records):
        j = i
        while j < len(records) and sorted_conf[j] == sorted_conf[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + 1 + j)  # average rank across the tie run
        i = j
    rank_sum = ranks[correct == 1.0].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def test_error(records):
    """Fraction of misclassified records, as a percentage."""
    if not records:
        raise ValueError("test_error requires at least one record")
    _, correct = _arrays(records)
    return float(100.0 * (1.0 - correct.mean()))


def build_report(records, n_bins, deltas):
    bins, ece = binned_ece(records, n_bins)
    subsets = [ece_on_subset(records, delta, n_bins) for delta in deltas]
    return CalibrationReport(
        n=len(records),
        n_bins=n_bins,
        bins=bins,
        ece=ece,
        subsets=subsets,
        test_error_pct=test_error(records),
        auroc=refinement_auroc(records),
    )


def export_reliability_rows(bins):
    """One (lower, upper, count, confidence, accuracy, gap) row per bin.

    Empty bins carry count 0 and None markers for confidence/accuracy/gap.
    """
    rows = []
    for b in bins:
        gap = None if b.count == 0 else b.accuracy - b.confidence
        rows.append((b.lower, b.upper, b.count, b.confidence, b.accuracy, gap))
    return rows


def confidence_histogram(records, n_bins):
    """(lower, upper, count, fraction) per bin over the same edge convention."""
    conf, _ = _arrays(records)
    idx = bin_indices(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    edges = bin_edges(n_bins)
    n = max(len(records), 1)
    rows = []
    for m in range(n_bins):
        lower = 0.0 if m == 0 else edges[m - 1]
        rows.append((float(lower), float(edges[m]), int(counts[m]), counts[m] / n))
    return rows


def report_to_dict(report):
    return {
        "n": report.n,
        "n_bins": report.n_bins,
        "ece": report.ece,
        "test_error_pct": report.test_error_pct,
        "auroc": report.auroc,
        "bins": [
            {"lower": b.lower, "upper": b.upper, "count": b.count,
             "confidence": b.confidence, "accuracy": b.accuracy}
            for b in report.bins
        ],
        "subsets": [
            {"delta": s.delta, "count": s.count, "fraction_pct": s.fraction_pct,
             "ece": s.ece, "empty": s.empty}
            for s in report.subsets
        ],
    }


def report_from_dict(doc):
    bins = [ReliabilityBin(b["lower"], b["upper"], b["count"],
                           b["confidence"], b["accuracy"]) for b in doc["bins"]]
    subsets = [SubsetCalibration(s["delta"], s["count"], s["fraction_pct"],
                                 s["ece"], s["empty"]) for s in doc["subsets"]]
    return CalibrationReport(doc["n"], doc["n_bins"], bins, doc["ece"], subsets,
                             doc["test_error_pct"], doc["auroc"])
