"""Soft-guidance attention loss.

A binary lesion mask is relaxed so background pixels keep a floor value rho
instead of 0, then the training loss penalizes 1 minus the cosine similarity
between that softened target and the model's spatial attention map. The
closed-form gradient with respect to the attention entries is provided for
training without an autodiff framework and as the reference for the torch
training path.

Pure functions; no global state.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

__all__ = [
    "soften_mask",
    "cosine_alignment",
    "attention_loss",
    "attention_loss_gradient",
    "resize_mask",
    "load_mask",
    "save_mask",
    "validate_attention_map",
]

# Loaded mask pixels strictly above this 8-bit value count as lesion.
MASK_BINARIZE_LEVEL = 127

ATTENTION_SUM_TOL = 1e-6


def _as_binary_mask(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask entries must be binary (0/1)")
    return mask.astype(float)


def validate_attention_map(attn) -> np.ndarray:
    """Check the spatial-probability contract: 2-D, non-negative, sums to 1."""
    attn = np.asarray(attn, dtype=float)
    if attn.ndim != 2:
        raise ValueError(f"attention map must be 2-D, got shape {attn.shape}")
    if np.any(attn < 0):
        raise ValueError("attention map entries must be non-negative")
    total = attn.sum()
    if abs(total - 1.0) > ATTENTION_SUM_TOL:
        raise ValueError(f"attention map must sum to 1 (got {total!r})")
    return attn


def soften_mask(mask, rho: float) -> np.ndarray:
    """rho + (1 - rho) * mask, elementwise.

    Background pixels take value rho, lesion pixels stay at 1; rho=0 returns
    the mask unchanged and rho=1 saturates to all-ones.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    mask = _as_binary_mask(mask)
    return rho + (1.0 - rho) * mask


def _flat_pair(target, attn):
    target = np.asarray(target, dtype=float)
    attn = np.asarray(attn, dtype=float)
    if target.shape != attn.shape:
        raise ValueError(f"shape mismatch: target {target.shape} vs attention {attn.shape}")
    t = target.ravel()
    a = attn.ravel()
    nt = np.linalg.norm(t)
    na = np.linalg.norm(a)
    if nt == 0.0:
        raise ValueError("target has zero norm")
    if na == 0.0:
        raise ValueError("attention map has zero norm")
    return t, a, nt, na


def cosine_alignment(target, attn) -> float:
    """Cosine similarity between the flattened target and attention map."""
    t, a, nt, na = _flat_pair(target, attn)
    return float(t @ a) / (nt * na)


def attention_loss(target, attn) -> float:
    """1 - cosine_alignment; zero when attention is proportional to the
    target, approaching 1 on disjoint supports."""
    return 1.0 - cosine_alignment(target, attn)


def attention_loss_gradient(target, attn) -> np.ndarray:
    """Closed-form gradient of the attention loss w.r.t. attention entries.

    d/da [1 - t.a / (|t||a|)] = -(t - (t.a / |a|^2) a) / (|t||a|)
    """
    t, a, nt, na = _flat_pair(target, attn)
    cos_scaled = float(t @ a) / (na * na)
    grad = -(t - cos_scaled * a) / (nt * na)
    return grad.reshape(np.asarray(attn).shape)


def resize_mask(mask, shape: tuple[int, int]) -> np.ndarray:
    """Resize a binary mask to the attention map's spatial resolution.

    Area-averages into the target grid, then re-binarizes at 0.5. Requires
    integer scale ratios between the two grids (the toolkit keeps masks and
    attention at matched resolutions, so only exact block scaling arises).
    """
    mask = _as_binary_mask(mask)
    h, w = mask.shape
    th, tw = shape
    if (h, w) == (th, tw):
        return mask
    if h % th == 0 and w % tw == 0:
        fh, fw = h // th, w // tw
        pooled = mask.reshape(th, fh, tw, fw).mean(axis=(1, 3))
    elif th % h == 0 and tw % w == 0:
        pooled = np.repeat(np.repeat(mask, th // h, axis=0), tw // w, axis=1)
    else:
        raise ValueError(f"mask shape {mask.shape} is not an integer multiple of {shape}")
    return (pooled >= 0.5).astype(float)


def load_mask(path) -> np.ndarray:
    """Load a single-channel mask image; pixel > 127 means lesion."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr > MASK_BINARIZE_LEVEL).astype(float)


def save_mask(path, mask):
    """Persist a binary mask as an 8-bit grayscale image (lesion = 255)."""
    mask = _as_binary_mask(mask)
    Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(path)
    return path
