"""Grouped classification performance and fairness metrics.

Computes per-group TPR/FPR, the equalized-odds family (EO, EO[TP], EO[FP]),
threshold-free ranking metrics (AUROC, AUPRC), and 95% confidence intervals,
for binary malignancy predictions scored on a two-level group attribute.

All functions are pure and operate on plain numpy arrays; nothing here holds
mutable state, so everything is safe to call concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "GroupedPredictions",
    "GroupRates",
    "FairnessReport",
    "UndefinedRateError",
    "group_rates",
    "equalized_odds",
    "auroc",
    "auprc",
    "confidence_interval",
    "bootstrap_interval",
    "fairness_report",
    "roc_points",
    "pr_points",
]

# Canonical group ordering: signed gaps are reported first-minus-second.
CANONICAL_ORDER = ("male", "female")


class UndefinedRateError(ValueError):
    """A rate's defining denominator was zero for some group."""

    def __init__(self, group: str, rate: str):
        self.group = group
        self.rate = rate
        super().__init__(
            f"{rate} is undefined for group {group!r}: defining denominator is zero"
        )


@dataclass(frozen=True)
class GroupedPredictions:
    """Scores, binary labels, and a two-level group attribute per sample.

    ``group_order`` fixes the sign convention for EO[TP]/EO[FP]
    (first minus second). It defaults to ("male", "female") when those are
    the observed levels, otherwise to the sorted level names.
    """

    scores: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    group_order: tuple[str, str] | None = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        labels = np.asarray(self.labels)
        groups = np.asarray(self.groups, dtype=object)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", groups)
        if scores.size == 0:
            raise ValueError("empty predictions")
        if not (scores.shape == labels.shape == groups.shape):
            raise ValueError(
                f"scores/labels/groups length mismatch: "
                f"{scores.shape} vs {labels.shape} vs {groups.shape}"
            )
        if np.any(scores < 0) or np.any(scores > 1) or not np.all(np.isfinite(scores)):
            raise ValueError("scores must lie in [0, 1]")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be binary (0/1)")
        levels = sorted({str(g) for g in groups})
        if len(levels) > 2:
            raise ValueError(f"expected at most two group levels, got {levels}")
        if self.group_order is None:
            if set(levels) <= set(CANONICAL_ORDER):
                order = CANONICAL_ORDER
            else:
                order = tuple(levels) if len(levels) == 2 else (levels[0], levels[0])
            object.__setattr__(self, "group_order", order)

    @property
    def levels(self) -> list[str]:
        return sorted({str(g) for g in self.groups})

    def require_both_groups(self):
        present = set(self.levels)
        for g in self.group_order:
            if g not in present:
                raise ValueError(f"group level {g!r} has no samples")

    def mask(self, group: str) -> np.ndarray:
        return np.array([str(g) == group for g in self.groups])


@dataclass(frozen=True)
class GroupRates:
    """Thresholded TPR/FPR per group; ``None`` marks an undefined rate."""

    tpr: dict[str, float | None]
    fpr: dict[str, float | None]
    threshold: float

    def require_defined(self):
        for rate_name, rates in (("TPR", self.tpr), ("FPR", self.fpr)):
            for group, value in rates.items():
                if value is None:
                    raise UndefinedRateError(group, rate_name)


@dataclass
class FairnessReport:
    """Full grouped evaluation: EO family, AUROC/AUPRC, CIs, counts."""

    eo: float
    eo_tp: float
    eo_fp: float
    auroc: float
    auprc: float
    ci: dict[str, tuple[float, float]]
    n_per_group: dict[str, int]
    threshold: float
    group_rates: GroupRates | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "eo": self.eo,
            "eo_tp": self.eo_tp,
            "eo_fp": self.eo_fp,
            "auroc": self.auroc,
            "auprc": self.auprc,
            "ci": {k: list(v) for k, v in self.ci.items()},
            "n_per_group": dict(self.n_per_group),
            "threshold": self.threshold,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "FairnessReport":
        return cls(
            eo=d["eo"],
            eo_tp=d["eo_tp"],
            eo_fp=d["eo_fp"],
            auroc=d["auroc"],
            auprc=d["auprc"],
            ci={k: (v[0], v[1]) for k, v in d["ci"].items()},
            n_per_group={k: int(v) for k, v in d["n_per_group"].items()},
            threshold=d["threshold"],
        )


def group_rates(preds: GroupedPredictions, threshold: float = 0.5) -> GroupRates:
    """Per-group TPR and FPR with prediction = (score >= threshold).

    A rate whose defining denominator is zero (no positives for TPR, no
    negatives for FPR) is reported as ``None``, never as a silent zero.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    preds.require_both_groups()
    predicted = preds.scores >= threshold
    tpr: dict[str, float | None] = {}
    fpr: dict[str, float | None] = {}
    for g in preds.group_order:
        m = preds.mask(g)
        y = preds.labels[m]
        p = predicted[m]
        n_pos = int((y == 1).sum())
        n_neg = int((y == 0).sum())
        tpr[g] = float(p[y == 1].sum() / n_pos) if n_pos else None
        fpr[g] = float(p[y == 0].sum() / n_neg) if n_neg else None
    return GroupRates(tpr=tpr, fpr=fpr, threshold=threshold)


def equalized_odds(rates: GroupRates, order: tuple[str, str] | None = None):
    """EO family from per-group rates.

    Returns (eo, eo_tp, eo_fp) where eo_tp/eo_fp are signed first-minus-second
    gaps in TPR/FPR and eo = max(|eo_tp|, |eo_fp|).
    """
    rates.require_defined()
    if order is None:
        keys = list(rates.tpr)
        order = CANONICAL_ORDER if set(keys) == set(CANONICAL_ORDER) else tuple(sorted(keys))
    a, b = order
    eo_tp = rates.tpr[a] - rates.tpr[b]
    eo_fp = rates.fpr[a] - rates.fpr[b]
    eo = max(abs(eo_tp), abs(eo_fp))
    return eo, eo_tp, eo_fp


def _check_scores_labels(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ValueError("empty input")
    return scores, labels


def auroc(preds: GroupedPredictions | None = None, *, scores=None, labels=None) -> float:
    """Area under the ROC curve, Mann-Whitney formulation.

    Equals the probability that a uniformly random positive outscores a
    uniformly random negative, with ties counted one half. Computed from
    midranks, so it is exact for tied scores and invariant under strictly
    monotone score transforms.
    """
    if preds is not None:
        scores, labels = preds.scores, preds.labels
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative sample")
    ranks = rankdata(scores)  # midranks handle ties as half-wins
    rank_sum_pos = ranks[labels == 1].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(preds: GroupedPredictions | None = None, *, scores=None, labels=None) -> float:
    """Area under the precision-recall step curve (descending-score sweep).

    Sums precision * delta-recall over distinct score thresholds, taken in
    decreasing order; for all-tied scores this reduces to the prevalence.
    """
    if preds is not None:
        scores, labels = preds.scores, preds.labels
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise ValueError("AUPRC needs at least one positive sample")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    # Evaluate only at the last index of each tied-score block.
    block_end = np.append(s[1:] != s[:-1], True)
    tp = tp[block_end]
    fp = fp[block_end]
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * precision))


def confidence_interval(metric_values) -> tuple[float, float]:
    """95% normal-approximation interval over repeated runs.

    mean +/- 1.96 * sample SD / sqrt(n); not clamped to [0, 1].
    """
    values = np.asarray(metric_values, dtype=float)
    if values.size < 2:
        raise ValueError("confidence interval needs at least 2 values")
    mean = values.mean()
    half = 1.96 * values.std(ddof=1) / np.sqrt(values.size)
    return float(mean - half), float(mean + half)


def bootstrap_interval(
    preds: GroupedPredictions,
    metric: str,
    threshold: float = 0.5,
    n_boot: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap 95% CI over samples for one report metric.

    Resamples with replacement; draws that lose a group level or a label
    class needed by the metric are skipped.
    """
    rng = np.random.default_rng(seed)
    n = preds.scores.size
    values = []
    for _ in range(n_boot):
        idx = rng.integers(0, n, size=n)
        try:
            sub = GroupedPredictions(
                preds.scores[idx], preds.labels[idx], preds.groups[idx],
                group_order=preds.group_order,
            )
            values.append(_point_metric(sub, metric, threshold))
        except ValueError:
            continue
    if len(values) < 2:
        raise ValueError(f"bootstrap produced too few valid resamples for {metric!r}")
    low, high = np.percentile(values, [2.5, 97.5])
    return float(low), float(high)


def _point_metric(preds: GroupedPredictions, metric: str, threshold: float) -> float:
    if metric == "auroc":
        return auroc(preds)
    if metric == "auprc":
        return auprc(preds)
    eo, eo_tp, eo_fp = equalized_odds(group_rates(preds, threshold), preds.group_order)
    return {"eo": eo, "eo_tp": eo_tp, "eo_fp": eo_fp}[metric]


_REPORT_METRICS = ("eo", "eo_tp", "eo_fp", "auroc", "auprc")


def fairness_report(
    preds: GroupedPredictions,
    threshold: float = 0.5,
    ci: str = "none",
    n_boot: int = 1000,
    seed: int = 0,
) -> FairnessReport:
    """Aggregate grouped rates, EO family, AUROC and AUPRC into one report.

    ``ci="none"`` (default) reports zero-width intervals at the point
    estimates; ``ci="bootstrap"`` replaces them with percentile bootstrap
    intervals over samples. Intervals over repeated seeds are the caller's
    job (see :func:`confidence_interval`).
    """
    if ci not in ("none", "bootstrap"):
        raise ValueError(f"unknown ci mode {ci!r}")
    rates = group_rates(preds, threshold)
    eo, eo_tp, eo_fp = equalized_odds(rates, preds.group_order)
    point = {
        "eo": eo,
        "eo_tp": eo_tp,
        "eo_fp": eo_fp,
        "auroc": auroc(preds),
        "auprc": auprc(preds),
    }
    if ci == "bootstrap":
        intervals = {
            m: bootstrap_interval(preds, m, threshold, n_boot=n_boot, seed=seed)
            for m in _REPORT_METRICS
        }
        # Percentile intervals on small samples may not straddle the point
        # estimate; widen minimally so containment always holds.
        intervals = {
            m: (min(lo, point[m]), max(hi, point[m]))
            for m, (lo, hi) in intervals.items()
        }
    else:
        intervals = {m: (point[m], point[m]) for m in _REPORT_METRICS}
    n_per_group = {g: int(preds.mask(g).sum()) for g in preds.group_order}
    return FairnessReport(
        eo=point["eo"],
        eo_tp=point["eo_tp"],
        eo_fp=point["eo_fp"],
        auroc=point["auroc"],
        auprc=point["auprc"],
        ci=intervals,
        n_per_group=n_per_group,
        threshold=threshold,
        group_rates=rates,
    )


def roc_points(scores, labels):
    """(fpr, tpr) pairs swept over distinct thresholds, plus both endpoints.

    Points are ordered from (0, 0) to (1, 1).
    """
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    block_end = np.append(s[1:] != s[:-1], True)
    fpr = np.concatenate(([0.0], fp[block_end] / n_neg))
    tpr = np.concatenate(([0.0], tp[block_end] / n_pos))
    return fpr, tpr


def pr_points(scores, labels):
    """(recall, precision) pairs over distinct thresholds, with the
    conventional (0, 1) starting point."""
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise ValueError("PR curve needs at least one positive sample")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    block_end = np.append(s[1:] != s[:-1], True)
    recall = np.concatenate(([0.0], tp[block_end] / n_pos))
    precision = np.concatenate(([1.0], tp[block_end] / (tp[block_end] + fp[block_end])))
    return recall, precision
