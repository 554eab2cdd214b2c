"""Attention-alignment analysis and figure-style artifacts.

Quantifies how well a model's attention matches expert lesion masks
(intersection-over-union after binarizing the attention map), renders
heatmap overlays, and emits ROC/PR curves as images plus the underlying
points as CSV. Everything here is deterministic given inputs and seeds;
report timestamps live in a separate provenance field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .data import LabeledImage
from .metrics import pr_points, roc_points
from .model import RANN, load_checkpoint

__all__ = [
    "AlignmentStats",
    "ReportBundle",
    "binarize_attention",
    "iou",
    "alignment_stats",
    "render_overlay",
    "plot_curves",
    "sample_stratified_cases",
]

BINARIZE_MODES = ("topk", "otsu")


def binarize_attention(attn, mode: str = "topk", k: int | None = None) -> np.ndarray:
    """Turn an attention map into a binary mask.

    "topk" marks the k highest-attention pixels (k is typically the paired
    lesion mask's pixel count); ties resolve in row-major order, so the
    result is deterministic. "otsu" thresholds by maximizing between-class
    variance over the attention values.
    """
    attn = np.asarray(attn, dtype=float)
    if mode not in BINARIZE_MODES:
        raise ValueError(f"unknown binarization mode {mode!r}; expected {BINARIZE_MODES}")
    if mode == "topk":
        if k is None:
            raise ValueError("topk binarization needs k (reference pixel count)")
        if not 0 < k <= attn.size:
            raise ValueError(f"k must lie in [1, {attn.size}], got {k}")
        order = np.argsort(-attn.ravel(), kind="stable")
        out = np.zeros(attn.size)
        out[order[:k]] = 1.0
        return out.reshape(attn.shape)
    return _otsu(attn)


def _otsu(attn: np.ndarray) -> np.ndarray:
    values = np.sort(attn.ravel())
    if values[0] == values[-1]:
        return np.ones_like(attn)  # constant map: single class
    # candidate thresholds between consecutive distinct values
    distinct = np.unique(values)
    cuts = (distinct[:-1] + distinct[1:]) / 2.0
    total = values.size
    best_score, best_cut = -np.inf, cuts[0]
    csum = np.cumsum(values)
    for cut in cuts:
        n0 = np.searchsorted(values, cut)
        n1 = total - n0
        mu0 = csum[n0 - 1] / n0
        mu1 = (csum[-1] - csum[n0 - 1]) / n1
        score = (n0 / total) * (n1 / total) * (mu0 - mu1) ** 2
        if score > best_score:
            best_score, best_cut = score, cut
    return (attn > best_cut).astype(float)


def iou(a, b) -> float:
    """|a AND b| / |a OR b| for two binary masks of equal shape."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = (a | b).sum()
    if union == 0:
        raise ValueError("both masks are empty")
    return float((a & b).sum() / union)


@dataclass
class AlignmentStats:
    """Per-image IoU values with overall and per-(group, label) aggregates."""

    per_image: dict[str, float]
    strata: dict[str, dict]  # "male_positive" etc. -> {median, sd, count}
    median: float
    sd: float

    def to_dict(self) -> dict:
        return {
            "median": self.median,
            "sd": self.sd,
            "count": len(self.per_image),
            "strata": self.strata,
            "per_image": self.per_image,
        }


def _sd(values: np.ndarray) -> float:
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


def alignment_stats(
    checkpoint,
    dataset: list[LabeledImage],
    mode: str = "topk",
) -> AlignmentStats:
    """IoU between each image's binarized attention map and its lesion mask.

    Every sample needs a mask (topk takes k from it). Strata mirror the
    (group, label) panels: male/female x positive/negative.
    """
    if not dataset:
        raise ValueError("empty dataset")
    missing = [s.source_id for s in dataset if s.mask is None]
    if missing:
        raise ValueError(f"samples without masks: {missing[:5]}")
    model = checkpoint if isinstance(checkpoint, RANN) else load_checkpoint(checkpoint)
    _, attns = model.predict([s.image for s in dataset])

    per_image = {}
    for sample, attn in zip(dataset, attns):
        k = int(sample.mask.sum()) if mode == "topk" else None
        predicted = binarize_attention(attn, mode=mode, k=k)
        per_image[sample.source_id] = iou(predicted, sample.mask)

    values = np.array(list(per_image.values()))
    strata = {}
    for group in ("male", "female"):
        for label, name in ((1, "positive"), (0, "negative")):
            sub = np.array(
                [
                    per_image[s.source_id]
                    for s in dataset
                    if s.group == group and s.label == label
                ]
            )
            if sub.size:
                strata[f"{group}_{name}"] = {
                    "median": float(np.median(sub)),
                    "sd": _sd(sub),
                    "count": int(sub.size),
                }
    return AlignmentStats(
        per_image=per_image,
        strata=strata,
        median=float(np.median(values)),
        sd=_sd(values),
    )


_OVERLAY_ALPHA = 0.5


def render_overlay(image, attn, out_path) -> Path:
    """Alpha-blend a max-normalized attention heatmap over the image and
    write an 8-bit RGB file. Same inputs produce byte-identical files."""
    image = np.asarray(image, dtype=float)
    attn = np.asarray(attn, dtype=float)
    if image.ndim != 3 or image.shape[1:] != attn.shape:
        raise ValueError(
            f"spatial shapes must match: image {image.shape} vs attention {attn.shape}"
        )
    peak = attn.max()
    normalized = attn / peak if peak > 0 else attn
    heat = plt.get_cmap("jet")(normalized)[..., :3]  # drop alpha channel
    rgb = image.transpose(1, 2, 0)
    blended = (1 - _OVERLAY_ALPHA) * rgb + _OVERLAY_ALPHA * heat
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    arr = (np.clip(blended, 0, 1) * 255).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(out_path)
    return out_path


def plot_curves(scores, labels, out_dir, stem: str = "curves") -> dict[str, Path]:
    """ROC and PR curve images plus the underlying points as CSV.

    Returns the four written paths keyed roc_png / roc_csv / pr_png / pr_csv.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fpr, tpr = roc_points(scores, labels)
    recall, precision = pr_points(scores, labels)

    paths = {
        "roc_png": out_dir / f"{stem}_roc.png",
        "roc_csv": out_dir / f"{stem}_roc.csv",
        "pr_png": out_dir / f"{stem}_pr.png",
        "pr_csv": out_dir / f"{stem}_pr.csv",
    }
    np.savetxt(
        paths["roc_csv"],
        np.column_stack([fpr, tpr]),
        delimiter=",",
        header="fpr,tpr",
        comments="",
    )
    np.savetxt(
        paths["pr_csv"],
        np.column_stack([recall, precision]),
        delimiter=",",
        header="recall,precision",
        comments="",
    )

    fig, ax = plt.subplots(figsize=(5, 4), dpi=120)
    ax.plot(fpr, tpr)
    ax.plot([0, 1], [0, 1], "--", lw=1, color="gray")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title("ROC")
    fig.tight_layout()
    fig.savefig(paths["roc_png"])
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4), dpi=120)
    ax.plot(recall, precision)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_ylim(0, 1.05)
    ax.set_title("Precision-recall")
    fig.tight_layout()
    fig.savefig(paths["pr_png"])
    plt.close(fig)
    return paths


def sample_stratified_cases(dataset: list[LabeledImage], seed: int = 0):
    """One case per (group, label) panel, seeded: male/female x neg/pos."""
    rng = np.random.default_rng(seed)
    picked = {}
    for group in ("male", "female"):
        for label, name in ((0, "negative"), (1, "positive")):
            pool = [s for s in dataset if s.group == group and s.label == label]
            if pool:
                picked[f"{group}_{name}"] = pool[int(rng.integers(len(pool)))]
    return picked


@dataclass
class ReportBundle:
    """Aggregated outputs: fairness reports, alignment stats, plot refs.

    ``write`` refuses to emit a bundle referencing files that do not exist.
    The creation timestamp lives only under "provenance", keeping the rest
    byte-stable for identical inputs.
    """

    fairness: dict[str, dict] = field(default_factory=dict)  # name -> report dict
    alignment: dict[str, dict] = field(default_factory=dict)  # name -> stats dict
    files: dict[str, str] = field(default_factory=dict)  # name -> path
    seeds: list[int] = field(default_factory=list)
    config_hashes: dict[str, str] = field(default_factory=dict)

    @staticmethod
    def hash_config(payload) -> str:
        canon = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(canon).hexdigest()[:16]

    def write(self, out_path, timestamp: str | None = None) -> Path:
        out_path = Path(out_path)
        missing = [p for p in self.files.values() if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"bundle references missing files: {missing}")
        body = {
            "fairness": self.fairness,
            "alignment": self.alignment,
            "files": self.files,
            "provenance": {
                "seeds": self.seeds,
                "config_hashes": self.config_hashes,
                "created_at": timestamp
                or datetime.now(timezone.utc).isoformat(timespec="seconds"),
            },
        }
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(body, indent=2, sort_keys=True))
        return out_path
