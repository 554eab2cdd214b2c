"""Dataset generation, ingestion, splitting, and summaries.

Two data sources feed the toolkit:

* a synthetic dermoscopy-like generator that plants (a) a label-informative
  texture inside each elliptical lesion (optionally shared with the
  immediate boundary ring) and (b) a group-revealing background texture
  with configurable probability -- the spurious shortcut; and
* ingestion of HAM/BCN-style directories (metadata CSV + image files +
  optional mask files).

Both produce the same in-memory samples and the same on-disk layout, so
every downstream path is format-agnostic. Generation is deterministic per
seed, with independent random streams per image component: regenerating
with a different signal strength changes only the pixels that signal
touches.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image
from scipy.ndimage import binary_dilation, gaussian_filter

from .guidance import load_mask, save_mask

__all__ = [
    "LabeledImage",
    "SyntheticSpec",
    "DatasetSplit",
    "generate_synthetic",
    "load_real_dataset",
    "save_dataset",
    "load_dataset_dir",
    "split_dataset",
    "save_split",
    "load_split",
    "dataset_summary",
    "lesion_context_region",
    "background_orientation_statistic",
    "lesion_texture_statistic",
    "HAM_MALIGNANT",
    "BCN_MALIGNANT",
]

log = logging.getLogger(__name__)

HAM_MALIGNANT = frozenset({"BCC", "MEL", "AKIEC"})
BCN_MALIGNANT = frozenset({"BCC", "MEL", "AK", "SCC"})

GROUPS = ("male", "female")

# --- synthetic generator constants -----------------------------------------
BASE_POSITIVE_RATE = 0.4
RING_WIDTH = 2  # pixels; the "immediate boundary ring" around the lesion
SKIN_RGB = (0.80, 0.62, 0.52)
ILLUMINATION_AMP = 0.05
GRAIN_AMP = 0.015
LESION_DARKENING = 0.62  # multiplicative floor at the lesion center
LESION_EDGE_SIGMA = 1.2  # soft falloff of the darkening
# label texture amplitudes (see _generate_one): the context_dependence
# fraction of the label signal moves to the boundary ring, entangled with a
# per-image nuisance amplitude that only interior+ring jointly cancel
TEXTURE_FLOOR = 0.05
TEXTURE_GAIN = 0.12
TEXTURE_JITTER = 0.02
NUISANCE_STD = 0.8
# group cue: oriented grating added to the background
CUE_AMP = 0.11
CUE_CYCLES = (6, 13)  # inclusive integer range
MAX_GEOMETRY_RETRIES = 100


@dataclass
class LabeledImage:
    """One sample: image (3,H,W) float32 in [0,1], binary malignancy label,
    two-level group attribute, optional binary lesion mask, stable id."""

    image: np.ndarray
    label: int
    group: str
    mask: np.ndarray | None
    source_id: str
    age: float | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0/1, got {self.label!r}")
        if not self.group:
            raise ValueError("group must be non-missing")
        if self.mask is not None and self.mask.shape != self.image.shape[1:]:
            raise ValueError(
                f"mask shape {self.mask.shape} does not match image {self.image.shape[1:]}"
            )

    def without_mask(self) -> "LabeledImage":
        return replace(self, mask=None)


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the synthetic generator.

    lesion_signal_strength scales the label-informative texture;
    shortcut_strength is the per-image probability that the background
    carries a group-revealing oriented grating; context_dependence moves
    that fraction of the label signal from the lesion interior into the
    boundary ring; group_label_correlation shifts per-group positive rates
    symmetrically around the 0.4 base rate (+1 pushes the male rate to the
    feasible maximum).
    """

    n_samples: int
    resolution: int = 64
    lesion_signal_strength: float = 1.0
    shortcut_strength: float = 0.0
    context_dependence: float = 0.0
    group_label_correlation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.resolution < 4:
            raise ValueError("resolution must be >= 4")
        if self.lesion_signal_strength < 0:
            raise ValueError("lesion_signal_strength must be >= 0")
        for name in ("shortcut_strength", "context_dependence"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not -1.0 <= self.group_label_correlation <= 1.0:
            raise ValueError("group_label_correlation must lie in [-1, 1]")

    @property
    def positive_rates(self) -> dict[str, float]:
        half_gap = self.group_label_correlation * min(
            BASE_POSITIVE_RATE, 1 - BASE_POSITIVE_RATE
        )
        return {
            "male": BASE_POSITIVE_RATE + half_gap,
            "female": BASE_POSITIVE_RATE - half_gap,
        }


@dataclass
class DatasetSplit:
    train: list[LabeledImage]
    validation: list[LabeledImage]
    test: list[LabeledImage]

    def __post_init__(self):
        ids = [s.source_id for part in (self.train, self.validation, self.test) for s in part]
        if len(ids) != len(set(ids)):
            raise ValueError("split parts are not disjoint by source_id")

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def lesion_context_region(mask: np.ndarray, ring_width: int = RING_WIDTH) -> np.ndarray:
    """Lesion plus its immediate boundary ring, as a boolean array."""
    return binary_dilation(mask.astype(bool), iterations=ring_width)


def _sample_geometry(rng: np.random.Generator, resolution: int):
    """Ellipse (center, axes, angle) fully inside the image with room for the
    ring; resamples a bounded number of times before giving up."""
    r = resolution
    margin = RING_WIDTH + 1
    for _ in range(MAX_GEOMETRY_RETRIES):
        a = rng.uniform(r / 8, r / 4)
        b = rng.uniform(r / 8, r / 4)
        angle = rng.uniform(0, np.pi)
        ext = max(a, b)
        lo, hi = margin + ext, r - margin - ext
        if ext < 2 or hi < lo:
            continue
        cx = rng.uniform(lo, hi)
        cy = rng.uniform(lo, hi)
        return cx, cy, a, b, angle
    raise ValueError(
        f"could not place a lesion inside a {r}x{r} image "
        f"after {MAX_GEOMETRY_RETRIES} attempts"
    )


def _ellipse_mask(resolution: int, cx, cy, a, b, angle) -> np.ndarray:
    yy, xx = np.mgrid[0:resolution, 0:resolution]
    x = xx - cx
    y = yy - cy
    u = x * np.cos(angle) + y * np.sin(angle)
    v = -x * np.sin(angle) + y * np.cos(angle)
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(float)


def _bandpass(rng: np.random.Generator, shape) -> np.ndarray:
    field_ = rng.normal(size=shape)
    bp = gaussian_filter(field_, 0.7) - gaussian_filter(field_, 2.0)
    return bp / max(bp.std(), 1e-9)


def _generate_one(spec: SyntheticSpec, index: int, child_seed) -> LabeledImage:
    streams = [np.random.default_rng(s) for s in child_seed.spawn(5)]
    geom_rng, demo_rng, base_rng, texture_rng, cue_rng = streams
    r = spec.resolution

    # geometry and mask
    cx, cy, a, b, angle = _sample_geometry(geom_rng, r)
    mask = _ellipse_mask(r, cx, cy, a, b, angle)
    region = lesion_context_region(mask)
    ring = region & ~mask.astype(bool)

    # demographics: group, age, label (base rates shifted per group)
    group = GROUPS[int(demo_rng.uniform() < 0.5)]
    age_mean = 55.0 if group == "male" else 49.0
    age = float(np.clip(demo_rng.normal(age_mean, 12.0), 18.0, 90.0))
    label = int(demo_rng.uniform() < spec.positive_rates[group])

    # base skin: smooth illumination + fine grain, shared across channels
    illum = gaussian_filter(base_rng.normal(size=(r, r)), r / 8.0)
    illum *= ILLUMINATION_AMP / max(illum.std(), 1e-9)
    grain = base_rng.normal(scale=GRAIN_AMP, size=(r, r))
    tint = base_rng.uniform(-0.03, 0.03)

    # label-informative texture. A context_dependence fraction of the label
    # signal moves into the ring; a nuisance amplitude nu pollutes the
    # interior and is cancelled by the ring, so the interior alone reads the
    # label at reduced signal-to-noise while interior+ring reads it cleanly:
    #   amp_interior ~ (1-cd)*label + cd*nu,  amp_ring ~ cd*(label - nu)
    cd = spec.context_dependence
    nu = texture_rng.normal() * NUISANCE_STD
    jitter_i, jitter_r = texture_rng.normal(size=2) * TEXTURE_JITTER
    interior_amp = spec.lesion_signal_strength * max(
        TEXTURE_FLOOR + TEXTURE_GAIN * ((1 - cd) * label + cd * nu) + jitter_i, 0.0
    )
    ring_amp = spec.lesion_signal_strength * max(
        TEXTURE_FLOOR + TEXTURE_GAIN * cd * (label - nu) + jitter_r, 0.0
    )
    texture = _bandpass(texture_rng, (r, r))
    additive = texture * (interior_amp * mask + ring_amp * ring)

    # group shortcut: oriented grating on the background only
    cue_visible = cue_rng.uniform() < spec.shortcut_strength
    cycles = cue_rng.integers(CUE_CYCLES[0], CUE_CYCLES[1] + 1)
    phase = cue_rng.uniform(0, 2 * np.pi)
    if cue_visible:
        coords = np.arange(r) * (2 * np.pi * cycles / r)
        if group == "male":  # vertical stripes: intensity varies along columns
            grating = np.sin(coords + phase)[None, :].repeat(r, axis=0)
        else:  # horizontal stripes
            grating = np.sin(coords + phase)[:, None].repeat(r, axis=1)
        additive = additive + CUE_AMP * grating * ~region

    # darken the lesion body with a soft edge (keeps the high-pass band
    # free of mask-boundary artifacts); textures are added undarkened
    darkening = 1.0 - (1.0 - LESION_DARKENING) * gaussian_filter(mask, LESION_EDGE_SIGMA)
    channels = [
        np.clip((base + tint + illum + grain) * darkening + additive, 0.0, 1.0)
        for base in SKIN_RGB
    ]
    image = np.stack(channels).astype(np.float32)

    return LabeledImage(
        image=image,
        label=label,
        group=group,
        mask=mask,
        source_id=f"syn_{index:06d}",
        age=round(age, 1),
    )


def generate_synthetic(spec: SyntheticSpec) -> list[LabeledImage]:
    """Generate samples, deterministically per spec (seed included), ordered
    by source_id."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_samples)
    return [_generate_one(spec, i, child) for i, child in enumerate(children)]


# --- planted-signal probes (used as oracles by tests and demos) ------------


def background_orientation_statistic(sample: LabeledImage) -> float:
    """Column-gradient minus row-gradient energy over the background.

    Positive values indicate vertical stripes (the male cue), negative
    horizontal; near zero when no cue was planted. Reads nothing but
    background pixels.
    """
    if sample.mask is None:
        raise ValueError(f"sample {sample.source_id} has no mask")
    lum = sample.image.mean(axis=0)
    bg = ~lesion_context_region(sample.mask)
    dcol = np.diff(lum, axis=1)
    drow = np.diff(lum, axis=0)
    col_valid = bg[:, 1:] & bg[:, :-1]
    row_valid = bg[1:, :] & bg[:-1, :]
    return float((dcol[col_valid] ** 2).mean() - (drow[row_valid] ** 2).mean())


def lesion_texture_statistic(sample: LabeledImage, include_ring: bool = True) -> float:
    """Estimated texture amplitude inside the lesion, plus the ring's when
    ``include_ring``; higher for malignant samples by construction.

    Summing the interior and ring amplitude estimates cancels the planted
    nuisance amplitude, so dropping the ring strictly degrades this reader
    whenever context_dependence > 0.
    """
    if sample.mask is None:
        raise ValueError(f"sample {sample.source_id} has no mask")
    lum = sample.image.mean(axis=0)
    highpass = lum - gaussian_filter(lum, 2.0)
    interior = sample.mask.astype(bool)
    stat = float(np.sqrt((highpass[interior] ** 2).mean()))
    if include_ring:
        ring = lesion_context_region(sample.mask) & ~interior
        stat += float(np.sqrt((highpass[ring] ** 2).mean()))
    return stat


# --- ingestion and persistence ----------------------------------------------

REQUIRED_COLUMNS = ("image_id", "diagnosis", "sex", "age")
_IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def _find_image(images_dir: Path, image_id: str) -> Path:
    for ext in _IMAGE_EXTENSIONS:
        p = images_dir / f"{image_id}{ext}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no image file found for id {image_id!r} in {images_dir}")


def _load_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def load_real_dataset(
    metadata_path,
    images_dir,
    masks_dir=None,
    malignant_diagnoses=HAM_MALIGNANT,
) -> list[LabeledImage]:
    """Ingest a metadata CSV plus image (and optional mask) directories.

    The binary label is membership of the upper-cased diagnosis in
    ``malignant_diagnoses``; rows with missing sex are dropped (count
    logged); a missing image file is an error naming the id. Output is
    sorted by image_id.
    """
    metadata_path = Path(metadata_path)
    images_dir = Path(images_dir)
    masks_dir = Path(masks_dir) if masks_dir is not None else None
    df = pd.read_csv(metadata_path)
    if df.empty and df.columns.empty:
        raise ValueError(f"{metadata_path}: empty metadata file")
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{metadata_path}: missing columns {missing}")
    if df.empty:
        raise ValueError(f"{metadata_path}: no data rows")

    malignant = {d.upper() for d in malignant_diagnoses}
    sex = df["sex"].astype("string").str.strip().str.lower()
    keep = sex.isin(GROUPS)
    n_dropped = int((~keep).sum())
    if n_dropped:
        log.info("dropped %d rows with missing or unrecognized sex", n_dropped)
    df = df[keep.fillna(False)]
    if df.empty:
        raise ValueError(f"{metadata_path}: no usable rows after dropping missing sex")

    samples = []
    for row in df.itertuples(index=False):
        image_id = str(row.image_id)
        image = _load_rgb(_find_image(images_dir, image_id))
        mask = None
        if masks_dir is not None:
            for ext in _IMAGE_EXTENSIONS:
                p = masks_dir / f"{image_id}{ext}"
                if p.exists():
                    mask = load_mask(p)
                    break
        age = None if pd.isna(row.age) else float(row.age)
        samples.append(
            LabeledImage(
                image=image,
                label=int(str(row.diagnosis).upper() in malignant),
                group=str(row.sex).strip().lower(),
                mask=mask,
                source_id=image_id,
                age=age,
            )
        )
    samples.sort(key=lambda s: s.source_id)
    return samples


def save_dataset(out_dir, samples: list[LabeledImage]) -> Path:
    """Persist samples as images/ + masks/ + metadata.csv, the same layout
    ingestion reads. Synthetic labels are encoded as MEL/NV diagnoses."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in sorted(samples, key=lambda s: s.source_id):
        arr = (np.clip(s.image, 0, 1) * 255).round().astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(out_dir / "images" / f"{s.source_id}.png")
        if s.mask is not None:
            save_mask(out_dir / "masks" / f"{s.source_id}.png", s.mask)
        rows.append(
            {
                "image_id": s.source_id,
                "diagnosis": "MEL" if s.label else "NV",
                "sex": s.group,
                "age": s.age,
            }
        )
    pd.DataFrame(rows).to_csv(out_dir / "metadata.csv", index=False)
    return out_dir


def load_dataset_dir(dataset_dir, malignant_diagnoses=HAM_MALIGNANT) -> list[LabeledImage]:
    """Read back a :func:`save_dataset` directory (or any directory in that
    layout)."""
    dataset_dir = Path(dataset_dir)
    masks = dataset_dir / "masks"
    return load_real_dataset(
        dataset_dir / "metadata.csv",
        dataset_dir / "images",
        masks if masks.exists() else None,
        malignant_diagnoses=malignant_diagnoses,
    )


# --- splitting ----------------------------------------------------------------


def _allocate(n: int, ratios) -> list[int]:
    """Largest-remainder allocation of n items over the ratio buckets."""
    exact = [r * n for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: exact[i] - counts[i], reverse=True)
    for i in range(n - sum(counts)):
        counts[order[i % len(order)]] += 1
    return counts


def split_dataset(
    data: list[LabeledImage],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> DatasetSplit:
    """Random train/validation/test split, stratified jointly on
    (label, group), deterministic per seed.

    Strata with fewer than 3 members cannot land in all three parts; they
    fall back to a pooled non-stratified split (with a warning).
    """
    if len(data) < 5:
        raise ValueError("need at least 5 samples to split")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    by_stratum: dict[tuple, list[LabeledImage]] = {}
    for s in sorted(data, key=lambda s: s.source_id):
        by_stratum.setdefault((s.label, s.group), []).append(s)

    parts: tuple[list, list, list] = ([], [], [])
    pooled: list[LabeledImage] = []
    for key in sorted(by_stratum, key=str):
        members = by_stratum[key]
        if len(members) < 3:
            warnings.warn(
                f"stratum {key} has only {len(members)} member(s); "
                "falling back to a non-stratified split for it",
                stacklevel=2,
            )
            pooled.extend(members)
            continue
        rng.shuffle(members)
        counts = _allocate(len(members), ratios)
        start = 0
        for part, count in zip(parts, counts):
            part.extend(members[start : start + count])
            start += count
    if pooled:
        rng.shuffle(pooled)
        counts = _allocate(len(pooled), ratios)
        start = 0
        for part, count in zip(parts, counts):
            part.extend(pooled[start : start + count])
            start += count

    ordered = [sorted(p, key=lambda s: s.source_id) for p in parts]
    return DatasetSplit(train=ordered[0], validation=ordered[1], test=ordered[2])


def save_split(path, split: DatasetSplit) -> Path:
    """Persist the split assignment as a two-column CSV (image_id, split)."""
    path = Path(path)
    rows = [
        {"image_id": s.source_id, "split": name}
        for name, part in (
            ("train", split.train),
            ("validation", split.validation),
            ("test", split.test),
        )
        for s in part
    ]
    pd.DataFrame(rows).sort_values("image_id").to_csv(path, index=False)
    return path


def load_split(path, data: list[LabeledImage]) -> DatasetSplit:
    """Re-apply a persisted split assignment to loaded samples."""
    df = pd.read_csv(Path(path))
    assignment = dict(zip(df["image_id"].astype(str), df["split"]))
    parts: dict[str, list] = {"train": [], "validation": [], "test": []}
    for s in data:
        where = assignment.get(s.source_id)
        if where is None:
            raise ValueError(f"sample {s.source_id} missing from split file {path}")
        if where not in parts:
            raise ValueError(f"unknown split name {where!r} for {s.source_id}")
        parts[where].append(s)
    return DatasetSplit(**parts)


# --- summaries ------------------------------------------------------------------


def dataset_summary(data: list[LabeledImage]) -> pd.DataFrame:
    """Per-group and total mean age, positive rate, and count."""
    if not data:
        raise ValueError("empty dataset")
    df = pd.DataFrame(
        {
            "group": [s.group for s in data],
            "label": [s.label for s in data],
            "age": [np.nan if s.age is None else s.age for s in data],
        }
    )
    rows = []
    groups = [g for g in GROUPS if (df["group"] == g).any()]
    groups += sorted(set(df["group"]) - set(GROUPS))
    for g in groups:
        sub = df[df["group"] == g]
        rows.append(
            {
                "group": g,
                "average_age": sub["age"].mean(),
                "positive_rate": sub["label"].mean(),
                "count": len(sub),
            }
        )
    rows.append(
        {
            "group": "total",
            "average_age": df["age"].mean(),
            "positive_rate": df["label"].mean(),
            "count": len(df),
        }
    )
    return pd.DataFrame(rows)
