"""Desk-scale residual attention network for binary malignancy scoring.

The network computes a single-channel spatial attention map from the input
image (conv + softmax over all pixel positions), multiplies it into the
image, and classifies the attention-weighted result with a small residual
trunk. The public API is numpy in / numpy out; torch is the internal
compute engine.

A model instance mutates its weights during training and must not be shared
across threads then; frozen instances are safe for concurrent inference.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .guidance import validate_attention_map

__all__ = [
    "ModelConfig",
    "ForwardOutput",
    "RANN",
    "apply_attention",
    "lesion_only_input",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "lesionattn-checkpoint"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The spatial resolution must be divisible by 2**n_residual_blocks (each
    block opens with a stride-2 transition). ``attention_rescale`` keeps a
    uniform attention map magnitude-neutral by scaling the attention-weighted
    image by H*W; set False for the raw probability weighting.
    ``use_attention`` disables the learned attention path entirely (the
    static-mask training variant).
    """

    input_resolution: int = 64
    attention_conv_kernel_size: int = 3
    n_residual_blocks: int = 3
    channels_per_block: tuple[int, ...] = (16, 32, 64)
    head_hidden_units: int = 32
    seed: int = 0
    attention_rescale: bool = True
    use_attention: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels_per_block", tuple(self.channels_per_block))
        for name in (
            "input_resolution",
            "attention_conv_kernel_size",
            "n_residual_blocks",
            "head_hidden_units",
        ):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if len(self.channels_per_block) != self.n_residual_blocks:
            raise ValueError(
                f"channels_per_block has {len(self.channels_per_block)} entries "
                f"for {self.n_residual_blocks} blocks"
            )
        if any(not isinstance(c, int) or c <= 0 for c in self.channels_per_block):
            raise ValueError("channels_per_block entries must be positive integers")
        down = 2**self.n_residual_blocks
        if self.input_resolution % down != 0:
            raise ValueError(
                f"input_resolution {self.input_resolution} must be divisible by "
                f"the total downsampling factor {down}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels_per_block"] = list(self.channels_per_block)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["channels_per_block"] = tuple(d["channels_per_block"])
        return cls(**d)


@dataclass(frozen=True)
class ForwardOutput:
    score: float  # malignancy probability
    attention: np.ndarray  # H x W, sums to 1


class _ResidualBlock(nn.Module):
    """Stride-2 transition conv followed by a two-conv residual pair."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.transition = nn.Conv2d(cin, cout, 3, stride=2, padding=1, bias=False)
        self.bn_t = nn.BatchNorm2d(cout)
        self.conv1 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)

    def forward(self, x):
        x = torch.relu(self.bn_t(self.transition(x)))
        h = torch.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return torch.relu(x + h)


class _RannNet(nn.Module):
    """Differentiable graph: (N,3,H,W) -> (logits (N,), attention (N,H,W))."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        k = config.attention_conv_kernel_size
        self.attention_conv = nn.Conv2d(3, 1, k, padding=k // 2, bias=True)
        blocks = []
        cin = 3
        for c in config.channels_per_block:
            blocks.append(_ResidualBlock(cin, c))
            cin = c
        self.blocks = nn.Sequential(*blocks)
        self.fc1 = nn.Linear(cin, config.head_hidden_units)
        self.fc2 = nn.Linear(config.head_hidden_units, 1)

    def attention(self, x):
        n, _, h, w = x.shape
        logits = self.attention_conv(x).reshape(n, h * w)
        return torch.softmax(logits, dim=1).reshape(n, h, w)

    def forward(self, x, input_weight=None):
        """input_weight, when given, replaces the learned attention path:
        the input is multiplied by it (no rescale) before the trunk."""
        n, _, h, w = x.shape
        if self.config.use_attention:
            attn = self.attention(x)
            weighted = attn.unsqueeze(1) * x
            if self.config.attention_rescale:
                weighted = weighted * (h * w)
        else:
            attn = torch.full((n, h, w), 1.0 / (h * w), dtype=x.dtype, device=x.device)
            weighted = x if input_weight is None else input_weight.unsqueeze(1) * x
        feats = self.blocks(weighted).mean(dim=(2, 3))
        logits = self.fc2(torch.relu(self.fc1(feats))).squeeze(1)
        return logits, attn


def _kaiming_init(net: nn.Module, seed: int):
    gen = torch.Generator().manual_seed(seed)
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            fan_in = module.weight[0].numel()
            std = (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                module.weight.normal_(0.0, std, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
        elif isinstance(module, nn.BatchNorm2d):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()


class RANN:
    """Public model wrapper: numpy images in, scores and attention maps out."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.net = _RannNet(config)
        _kaiming_init(self.net, config.seed)
        self.net.eval()

    # -- validation -------------------------------------------------------

    def _check_image(self, image) -> np.ndarray:
        image = np.asarray(image, dtype=np.float32)
        r = self.config.input_resolution
        if image.shape != (3, r, r):
            raise ValueError(
                f"expected image of shape (3, {r}, {r}), got {image.shape}"
            )
        if not np.all(np.isfinite(image)):
            raise ValueError("image contains non-finite values")
        if image.min() < 0.0 or image.max() > 1.0:
            raise ValueError("image values must be normalized to [0, 1]")
        return image

    # -- inference --------------------------------------------------------

    def attention_block(self, image) -> np.ndarray:
        """Spatial attention map for one image; entries sum to 1."""
        image = self._check_image(image)
        with torch.no_grad():
            attn = self.net.attention(torch.from_numpy(image).unsqueeze(0))[0]
        return validate_attention_map(attn.double().numpy())

    def forward(self, image) -> ForwardOutput:
        """Score one image; returns the attention map actually used."""
        image = self._check_image(image)
        self.net.eval()
        with torch.no_grad():
            logit, attn = self.net(torch.from_numpy(image).unsqueeze(0))
            score = torch.sigmoid(logit)[0]
        return ForwardOutput(
            score=float(score), attention=validate_attention_map(attn[0].double().numpy())
        )

    def predict(self, images, batch_size: int = 64):
        """Batched scoring: (N,3,H,W) array-like -> (scores (N,), attention (N,H,W))."""
        images = [self._check_image(img) for img in images]
        self.net.eval()
        scores, attns = [], []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                x = torch.from_numpy(np.stack(images[start : start + batch_size]))
                logit, attn = self.net(x)
                scores.append(torch.sigmoid(logit).double().numpy())
                attns.append(attn.double().numpy())
        return np.concatenate(scores), np.concatenate(attns)


def apply_attention(image, attn) -> np.ndarray:
    """Elementwise product, the single-channel map broadcast across channels."""
    image = np.asarray(image, dtype=float)
    attn = np.asarray(attn, dtype=float)
    if image.ndim != 3 or attn.ndim != 2 or image.shape[1:] != attn.shape:
        raise ValueError(
            f"spatial shapes must match: image {image.shape} vs attention {attn.shape}"
        )
    return attn[None, :, :] * image


def lesion_only_input(image, mask) -> np.ndarray:
    """Zero the background: image * mask, for the static-mask variant."""
    image = np.asarray(image, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if image.ndim != 3 or mask.ndim != 2 or image.shape[1:] != mask.shape:
        raise ValueError(
            f"spatial shapes must match: image {image.shape} vs mask {mask.shape}"
        )
    if not mask.any():
        raise ValueError("mask is all zero: no lesion region to keep")
    return mask[None, :, :] * image


def save_checkpoint(path, model: RANN) -> Path:
    """Persist weights + config + seed in one self-describing file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "config": model.config.to_dict(),
            "seed": model.config.seed,
            "state_dict": model.net.state_dict(),
        },
        path,
    )
    return path


def load_checkpoint(path) -> RANN:
    """Rebuild a model from :func:`save_checkpoint` output; forward outputs
    are bitwise identical to the saved model's."""
    payload = torch.load(Path(path), weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    model = RANN(ModelConfig.from_dict(payload["config"]))
    model.net.load_state_dict(payload["state_dict"])
    model.net.eval()
    return model
