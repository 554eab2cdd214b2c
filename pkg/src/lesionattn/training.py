"""Training harness: loop, optimizer schedule, early stopping, grid search,
multi-seed repetition, and candidate emission for frontier selection.

Three training methods share one architecture: ``baseline`` minimizes binary
cross-entropy; ``lesion_attn`` adds the attention-alignment loss weighted by
lambda_attn; ``lesion_only`` bypasses the learned attention path and trains
on mask-cropped inputs. Lesion masks are consumed during training only --
evaluation never reads them, for any method.

Runs are deterministic functions of (config, data): the run seed drives
weight initialization and batch shuffling, and the same seed replays the
same epoch history. A run directory, when given, holds the config, per-epoch
metrics CSV, checkpoints, and the final record, and an interrupted run
resumes from it bit-for-bit.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import DatasetSplit, LabeledImage
from .guidance import resize_mask, soften_mask
from .metrics import FairnessReport, GroupedPredictions, auroc, fairness_report
from .model import RANN, ModelConfig, lesion_only_input, load_checkpoint, save_checkpoint
from .pareto import ModelCandidate

__all__ = [
    "TrainConfig",
    "EpochStats",
    "RunRecord",
    "TrainingDiverged",
    "lr_at_step",
    "training_loss",
    "train",
    "grid_search",
    "best_configuration",
    "emit_candidates",
    "evaluate",
    "load_run_record",
]

log = logging.getLogger(__name__)

METHODS = ("baseline", "lesion_attn", "lesion_only")


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the partial history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    method: str = "baseline"
    learning_rate: float = 1e-3
    lambda_attn: float = 0.0
    rho: float = 0.7
    epochs: int = 100
    early_stop_patience: int = 10
    lr_decay_factor: float = 0.99
    lr_decay_every: int = 10
    adam_betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 32
    seed: int = 0
    threshold: float = 0.5
    early_stop_metric: str = "auroc"  # "auroc" or "loss"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method != "lesion_attn" and self.lambda_attn != 0.0:
            raise ValueError(
                f"lambda_attn must be 0 for method {self.method!r} "
                f"(got {self.lambda_attn})"
            )
        if self.method == "lesion_attn" and self.lambda_attn < 0:
            raise ValueError("lambda_attn must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.epochs < 1 or self.early_stop_patience < 1 or self.batch_size < 1:
            raise ValueError("epochs, early_stop_patience and batch_size must be >= 1")
        if self.early_stop_metric not in ("auroc", "loss"):
            raise ValueError(f"unknown early_stop_metric {self.early_stop_metric!r}")
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        # the static-mask variant bypasses the learned attention path
        desired = self.method != "lesion_only"
        if self.model.use_attention != desired:
            object.__setattr__(self, "model", replace(self.model, use_attention=desired))

    @property
    def run_id(self) -> str:
        return (
            f"{self.method}-lr{self.learning_rate:g}-lam{self.lambda_attn:g}"
            f"-rho{self.rho:g}-s{self.seed}"
        )

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "model"}
        d["adam_betas"] = list(self.adam_betas)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["adam_betas"] = tuple(d["adam_betas"])
        d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


@dataclass
class EpochStats:
    epoch: int  # 1-based
    train_loss: float
    val_auroc: float
    val_eo: float
    lr: float  # learning rate used for the epoch's last optimizer step

    def as_row(self):
        return [self.epoch, self.train_loss, self.val_auroc, self.val_eo, self.lr]


@dataclass
class RunRecord:
    config: TrainConfig
    epoch_history: list[EpochStats]
    best_epoch: int
    val_report: FairnessReport
    test_report: FairnessReport | None
    best_checkpoint: Path | None
    run_dir: Path | None
    model: RANN | None = field(default=None, repr=False)

    @property
    def run_id(self) -> str:
        return self.config.run_id

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "epoch_history": [s.as_row() for s in self.epoch_history],
            "best_epoch": self.best_epoch,
            "val_report": self.val_report.to_dict(),
            "test_report": self.test_report.to_dict() if self.test_report else None,
            "best_checkpoint": str(self.best_checkpoint) if self.best_checkpoint else None,
        }


def lr_at_step(lr0: float, step: int, factor: float = 0.99, every: int = 10) -> float:
    """Closed-form schedule: the rate decays to ``factor`` of its current
    value after every ``every`` optimizer steps."""
    return lr0 * factor ** (step // every)


def _soft_target(mask, shape, rho) -> np.ndarray:
    return soften_mask(resize_mask(mask, shape), rho)


def training_loss(net, x, y, lambda_attn=0.0, soft_targets=None):
    """Differentiable batch loss: BCE plus the weighted attention term.

    ``soft_targets`` (N,H,W) must be given when lambda_attn > 0; the
    attention term is the mean over the batch of 1 - cos(target, attention).
    """
    logits, attn = net(x)
    loss = torch.nn.functional.binary_cross_entropy_with_logits(logits, y)
    if lambda_attn > 0.0:
        if soft_targets is None:
            raise ValueError("soft_targets required when lambda_attn > 0")
        t = soft_targets.reshape(soft_targets.shape[0], -1)
        a = attn.reshape(attn.shape[0], -1)
        cos = (t * a).sum(dim=1) / (t.norm(dim=1) * a.norm(dim=1))
        loss = loss + lambda_attn * (1.0 - cos).mean()
    return loss


def _stack_images(samples: list[LabeledImage]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.image for s in samples]).astype(np.float32))


def _grouped(samples: list[LabeledImage], scores: np.ndarray) -> GroupedPredictions:
    return GroupedPredictions(
        scores=np.clip(scores, 0.0, 1.0),
        labels=np.array([s.label for s in samples]),
        groups=np.array([s.group for s in samples], dtype=object),
    )


def _val_scores(net, x_val: torch.Tensor, batch_size: int) -> np.ndarray:
    net.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(x_val), batch_size):
            logits, _ = net(x_val[start : start + batch_size])
            out.append(torch.sigmoid(logits).double().numpy())
    return np.concatenate(out)


def _prepare_train_inputs(config: TrainConfig, samples: list[LabeledImage]):
    """Returns (inputs, labels, soft_targets). Masks are consumed here, at
    training time only."""
    if config.method == "lesion_attn" or config.method == "lesion_only":
        missing = [s.source_id for s in samples if s.mask is None]
        if missing:
            raise ValueError(
                f"method {config.method!r} needs training masks; missing for "
                f"{missing[:3]}{'...' if len(missing) > 3 else ''}"
            )
    if config.method == "lesion_only":
        images = np.stack(
            [lesion_only_input(s.image, s.mask) for s in samples]
        ).astype(np.float32)
    else:
        images = np.stack([s.image for s in samples]).astype(np.float32)
    x = torch.from_numpy(images)
    y = torch.tensor([float(s.label) for s in samples])
    soft = None
    if config.method == "lesion_attn":
        r = config.model.input_resolution
        soft = torch.from_numpy(
            np.stack(
                [_soft_target(s.mask, (r, r), config.rho) for s in samples]
            ).astype(np.float32)
        )
    return x, y, soft


class _RunState:
    """Everything needed to continue training after an interruption."""

    def __init__(self, net, optimizer, rng):
        self.net = net
        self.optimizer = optimizer
        self.rng = rng
        self.epoch = 0
        self.step = 0
        self.history: list[EpochStats] = []
        self.best_metric = None
        self.best_epoch = 0
        self.best_state = None

    def snapshot(self) -> dict:
        return {
            "net": self.net.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "rng": self.rng.bit_generator.state,
            "epoch": self.epoch,
            "step": self.step,
            "history": [s.as_row() for s in self.history],
            "best_metric": self.best_metric,
            "best_epoch": self.best_epoch,
            "best_state": self.best_state,
        }

    def restore(self, payload: dict):
        self.net.load_state_dict(payload["net"])
        self.optimizer.load_state_dict(payload["optimizer"])
        self.rng.bit_generator.state = payload["rng"]
        self.epoch = payload["epoch"]
        self.step = payload["step"]
        self.history = [EpochStats(*row) for row in payload["history"]]
        self.best_metric = payload["best_metric"]
        self.best_epoch = payload["best_epoch"]
        self.best_state = payload["best_state"]


def _write_metrics_csv(path: Path, history: list[EpochStats]):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_auroc", "val_eo", "lr"])
        for s in history:
            writer.writerow(s.as_row())


def train(
    config: TrainConfig,
    split: DatasetSplit,
    run_dir=None,
    evaluate_test: bool = True,
) -> RunRecord:
    """Train one model and report validation (and test) fairness.

    The best checkpoint is the validation argmax epoch (AUROC by default);
    training stops early after ``early_stop_patience`` epochs without strict
    improvement. With a ``run_dir`` the run is resumable: a finished run is
    loaded back instead of retrained, and a partial one continues from its
    last completed epoch with identical results.
    """
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        record_path = run_dir / "record.json"
        if record_path.exists():
            log.info("run %s already complete; loading record", config.run_id)
            return load_run_record(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2))

    if not split.train or not split.validation:
        raise ValueError("split needs non-empty train and validation parts")

    x_train, y_train, soft_targets = _prepare_train_inputs(config, split.train)
    x_val = _stack_images(split.validation)

    model = RANN(replace(config.model, seed=config.seed))
    net = model.net
    optimizer = torch.optim.Adam(
        net.parameters(), lr=config.learning_rate, betas=config.adam_betas
    )
    state = _RunState(net, optimizer, np.random.default_rng(config.seed))

    last_path = run_dir / "last.pt" if run_dir is not None else None
    if last_path is not None and last_path.exists():
        state.restore(torch.load(last_path, weights_only=False))
        log.info("resuming %s from epoch %d", config.run_id, state.epoch)

    n = len(split.train)

    while state.epoch < config.epochs:
        if state.best_metric is not None and (
            state.epoch - state.best_epoch >= config.early_stop_patience
        ):
            break
        state.epoch += 1
        net.train()
        order = state.rng.permutation(n)
        total_loss = 0.0
        lr_used = config.learning_rate
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size])
            lr_used = lr_at_step(
                config.learning_rate, state.step,
                config.lr_decay_factor, config.lr_decay_every,
            )
            for group in optimizer.param_groups:
                group["lr"] = lr_used
            optimizer.zero_grad()
            loss = training_loss(
                net,
                x_train[idx],
                y_train[idx],
                lambda_attn=config.lambda_attn,
                soft_targets=soft_targets[idx] if soft_targets is not None else None,
            )
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {state.epoch}, step {state.step}",
                    state.history,
                )
            loss.backward()
            optimizer.step()
            state.step += 1
            total_loss += float(loss.detach()) * len(idx)

        val_scores = _val_scores(net, x_val, config.batch_size)
        val_preds = _grouped(split.validation, val_scores)
        stats = EpochStats(
            epoch=state.epoch,
            train_loss=total_loss / n,
            val_auroc=auroc(val_preds),
            val_eo=fairness_report(val_preds, config.threshold).eo,
            lr=lr_used,
        )
        state.history.append(stats)

        metric = stats.val_auroc if config.early_stop_metric == "auroc" else -stats.train_loss
        if state.best_metric is None or metric > state.best_metric:
            state.best_metric = metric
            state.best_epoch = state.epoch
            state.best_state = {k: v.clone() for k, v in net.state_dict().items()}

        if run_dir is not None:
            torch.save(state.snapshot(), last_path)
            _write_metrics_csv(run_dir / "metrics.csv", state.history)

    # restore and persist the best checkpoint
    net.load_state_dict(state.best_state)
    net.eval()
    best_path = None
    if run_dir is not None:
        best_path = save_checkpoint(run_dir / "best.pt", model)

    val_scores, _ = model.predict([s.image for s in split.validation])
    val_report = fairness_report(_grouped(split.validation, val_scores), config.threshold)
    test_report = None
    if evaluate_test and split.test:
        test_report = evaluate(model, split.test, threshold=config.threshold)

    record = RunRecord(
        config=config,
        epoch_history=state.history,
        best_epoch=state.best_epoch,
        val_report=val_report,
        test_report=test_report,
        best_checkpoint=best_path,
        run_dir=run_dir,
        model=model,
    )
    if run_dir is not None:
        (run_dir / "record.json").write_text(json.dumps(record.to_dict(), indent=2))
    return record


def load_run_record(run_dir) -> RunRecord:
    """Load a finished run's record (and its best model) from its directory."""
    run_dir = Path(run_dir)
    payload = json.loads((run_dir / "record.json").read_text())
    best = payload.get("best_checkpoint")
    model = load_checkpoint(best) if best else None
    return RunRecord(
        config=TrainConfig.from_dict(payload["config"]),
        epoch_history=[EpochStats(*row) for row in payload["epoch_history"]],
        best_epoch=payload["best_epoch"],
        val_report=FairnessReport.from_dict(payload["val_report"]),
        test_report=(
            FairnessReport.from_dict(payload["test_report"])
            if payload.get("test_report")
            else None
        ),
        best_checkpoint=Path(best) if best else None,
        run_dir=run_dir,
        model=model,
    )


def grid_search(
    grid: dict,
    split: DatasetSplit,
    n_seeds: int,
    base_config: TrainConfig,
    run_root=None,
    evaluate_test: bool = True,
) -> list[RunRecord]:
    """Train the Cartesian product of grid values x seeds.

    Grid keys are TrainConfig field names; seeds are base_config.seed,
    base_config.seed + 1, ... The best configuration afterwards is
    :func:`best_configuration` over the returned records.
    """
    if not grid:
        raise ValueError("grid is empty")
    for key, values in grid.items():
        if key not in TrainConfig.__dataclass_fields__:
            raise ValueError(f"unknown grid parameter {key!r}")
        if not values:
            raise ValueError(f"grid axis {key!r} is empty")
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    run_root = Path(run_root) if run_root is not None else None

    keys = sorted(grid)
    records = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        for offset in range(n_seeds):
            cfg = replace(base_config, seed=base_config.seed + offset, **overrides)
            run_dir = run_root / cfg.run_id if run_root is not None else None
            log.info("grid run %s", cfg.run_id)
            records.append(train(cfg, split, run_dir=run_dir, evaluate_test=evaluate_test))
    return records


def _config_key(config: TrainConfig) -> tuple:
    d = config.to_dict()
    d.pop("seed")
    return tuple(sorted((k, repr(v)) for k, v in d.items()))


def best_configuration(records: list[RunRecord]) -> TrainConfig:
    """The configuration (seed aside) with the highest mean validation AUROC."""
    if not records:
        raise ValueError("no records")
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        groups.setdefault(_config_key(r.config), []).append(r)
    best_key = max(
        groups,
        key=lambda k: (float(np.mean([r.val_report.auroc for r in groups[k]])), k),
    )
    return groups[best_key][0].config


def emit_candidates(records: list[RunRecord]) -> list[ModelCandidate]:
    """One frontier candidate per run: p_pred = validation AUROC,
    p_fair = 1 - validation EO, at the run's best checkpoint."""
    if not records:
        raise ValueError("no records")
    out = []
    for r in records:
        if r.val_report is None:
            raise ValueError(f"record {r.run_id} has no validation report")
        out.append(
            ModelCandidate(
                id=r.run_id,
                p_pred=r.val_report.auroc,
                p_fair=1.0 - r.val_report.eo,
                hyperparams=(
                    ("lambda_attn", r.config.lambda_attn),
                    ("learning_rate", r.config.learning_rate),
                    ("method", r.config.method),
                    ("rho", r.config.rho),
                    ("seed", r.config.seed),
                ),
            )
        )
    return out


def evaluate(
    checkpoint,
    dataset: list[LabeledImage],
    threshold: float = 0.5,
    ci: str = "none",
) -> FairnessReport:
    """Score a dataset with a trained model and report grouped fairness.

    ``checkpoint`` is a RANN instance or a checkpoint path. Masks are never
    read here; predictions depend on images alone.
    """
    if not dataset:
        raise ValueError("empty evaluation dataset")
    model = checkpoint if isinstance(checkpoint, RANN) else load_checkpoint(checkpoint)
    scores, _ = model.predict([s.image for s in dataset])
    return fairness_report(_grouped(dataset, scores), threshold, ci=ci)
