"""Command-line entry point tying the toolkit together.

Subcommands: generate, ingest, split, train, gridsearch, evaluate, select,
attn-audit, plot, report. Every subcommand accepts ``--config FILE`` (a JSON
object whose keys are the long flag names with dashes as underscores) as a
defaults layer; explicit flags override it. Paths are resolved against
``--workdir``. Success exits 0; failures print a one-line JSON error to
stderr and exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, data, pareto, training
from .model import ModelConfig, load_checkpoint

MALIGNANT_PRESETS = {"HAM": data.HAM_MALIGNANT, "BCN": data.BCN_MALIGNANT}


def _resolve(workdir: str, path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(workdir) / p


def _add_common(parser):
    parser.add_argument("--config", help="JSON file providing flag defaults")
    parser.add_argument("--workdir", default=".", help="root for relative paths")


def _load_part(args, parts=("train", "validation", "test")):
    """Shared dataset/split loading for evaluate/plot/attn-audit."""
    samples = data.load_dataset_dir(_resolve(args.workdir, args.dataset))
    if args.splits is None:
        return samples
    split = data.load_split(_resolve(args.workdir, args.splits), samples)
    if args.part not in parts:
        raise ValueError(f"unknown part {args.part!r}")
    return getattr(split, args.part)


def _train_config(args) -> training.TrainConfig:
    model = ModelConfig(
        input_resolution=args.resolution,
        seed=args.seed,
    )
    return training.TrainConfig(
        method=args.method,
        learning_rate=args.lr,
        lambda_attn=args.lambda_attn if args.method == "lesion_attn" else 0.0,
        rho=args.rho,
        epochs=args.epochs,
        early_stop_patience=args.patience,
        batch_size=args.batch_size,
        seed=args.seed,
        threshold=args.threshold,
        model=model,
    )


# --- subcommand implementations ---------------------------------------------


def cmd_generate(args) -> int:
    spec = data.SyntheticSpec(
        n_samples=args.n_samples,
        resolution=args.resolution,
        lesion_signal_strength=args.lesion_signal_strength,
        shortcut_strength=args.shortcut_strength,
        context_dependence=args.context_dependence,
        group_label_correlation=args.group_label_correlation,
        seed=args.seed,
    )
    samples = data.generate_synthetic(spec)
    out = data.save_dataset(_resolve(args.workdir, args.out), samples)
    summary = data.dataset_summary(samples)
    print(f"wrote {len(samples)} samples to {out}")
    print(summary.to_string(index=False))
    return 0


def cmd_ingest(args) -> int:
    malignant = MALIGNANT_PRESETS.get(
        args.malignant.upper(), frozenset(d.strip().upper() for d in args.malignant.split(","))
    )
    samples = data.load_real_dataset(
        _resolve(args.workdir, args.metadata),
        _resolve(args.workdir, args.images),
        _resolve(args.workdir, args.masks) if args.masks else None,
        malignant_diagnoses=malignant,
    )
    out = data.save_dataset(_resolve(args.workdir, args.out), samples)
    print(f"ingested {len(samples)} samples into {out}")
    print(data.dataset_summary(samples).to_string(index=False))
    return 0


def cmd_split(args) -> int:
    samples = data.load_dataset_dir(_resolve(args.workdir, args.dataset))
    ratios = tuple(float(r) for r in args.ratios.split(","))
    split = data.split_dataset(samples, ratios=ratios, seed=args.seed)
    out = data.save_split(_resolve(args.workdir, args.out), split)
    print(f"split sizes train/val/test: {split.sizes()} -> {out}")
    return 0


def cmd_train(args) -> int:
    samples = data.load_dataset_dir(_resolve(args.workdir, args.dataset))
    split = data.load_split(_resolve(args.workdir, args.splits), samples)
    config = _train_config(args)
    record = training.train(
        config, split, run_dir=_resolve(args.workdir, args.run_dir)
    )
    print(f"run {record.run_id}: best epoch {record.best_epoch}")
    print(f"validation: auroc={record.val_report.auroc:.4f} eo={record.val_report.eo:.4f}")
    if record.test_report is not None:
        print(f"test:       auroc={record.test_report.auroc:.4f} eo={record.test_report.eo:.4f}")
    return 0


def cmd_gridsearch(args) -> int:
    samples = data.load_dataset_dir(_resolve(args.workdir, args.dataset))
    split = data.load_split(_resolve(args.workdir, args.splits), samples)
    grid = json.loads(args.grid)
    base = _train_config(args)
    run_root = _resolve(args.workdir, args.run_root)
    records = training.grid_search(grid, split, args.n_seeds, base, run_root=run_root)
    best = training.best_configuration(records)
    candidates = training.emit_candidates(records)
    frontier = pareto.pareto_frontier(candidates)
    out_csv = run_root / "candidates.csv"
    pareto.write_candidates_csv(out_csv, candidates, frontier=frontier)
    (run_root / "best_config.json").write_text(json.dumps(best.to_dict(), indent=2))
    print(f"{len(records)} runs; candidates -> {out_csv}")
    print(f"best configuration by mean validation AUROC: {best.run_id}")
    return 0


def cmd_evaluate(args) -> int:
    dataset = _load_part(args)
    report = training.evaluate(
        load_checkpoint(_resolve(args.workdir, args.checkpoint)),
        dataset,
        threshold=args.threshold,
        ci=args.ci,
    )
    text = report.to_json(indent=2)
    if args.out:
        _resolve(args.workdir, args.out).write_text(text)
    print(text)
    return 0


def cmd_select(args) -> int:
    candidates = pareto.read_candidates_csv(_resolve(args.workdir, args.candidates))
    frontier = pareto.pareto_frontier(candidates)
    chosen = pareto.select_final(frontier, policy=args.policy)
    if args.out:
        pareto.write_candidates_csv(
            _resolve(args.workdir, args.out), candidates, frontier=frontier
        )
    print(chosen.id)
    return 0


def cmd_attn_audit(args) -> int:
    dataset = _load_part(args)
    model = load_checkpoint(_resolve(args.workdir, args.checkpoint))
    stats = analysis.alignment_stats(model, dataset, mode=args.mode)
    out_dir = _resolve(args.workdir, args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "alignment.json").write_text(json.dumps(stats.to_dict(), indent=2))

    cases = analysis.sample_stratified_cases(dataset, seed=args.seed)
    for name, sample in cases.items():
        _, attns = model.predict([sample.image])
        analysis.render_overlay(
            sample.image, attns[0], out_dir / f"overlay_{name}_{sample.source_id}.png"
        )
    print(f"median IoU {stats.median:.4f} (sd {stats.sd:.4f}) over {len(stats.per_image)} images")
    print(f"artifacts -> {out_dir}")
    return 0


def cmd_plot(args) -> int:
    dataset = _load_part(args)
    model = load_checkpoint(_resolve(args.workdir, args.checkpoint))
    scores, _ = model.predict([s.image for s in dataset])
    labels = np.array([s.label for s in dataset])
    paths = analysis.plot_curves(scores, labels, _resolve(args.workdir, args.out_dir), stem=args.stem)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_report(args) -> int:
    bundle = analysis.ReportBundle(seeds=args.seeds or [])
    for item in args.fairness or []:
        name, path = item.split("=", 1)
        payload = json.loads(_resolve(args.workdir, path).read_text())
        bundle.fairness[name] = payload
        bundle.config_hashes[name] = analysis.ReportBundle.hash_config(payload)
    for item in args.alignment or []:
        name, path = item.split("=", 1)
        bundle.alignment[name] = json.loads(_resolve(args.workdir, path).read_text())
    for item in args.file or []:
        name, path = item.split("=", 1)
        bundle.files[name] = str(_resolve(args.workdir, path))
    out = bundle.write(_resolve(args.workdir, args.out))
    print(f"bundle -> {out}")
    return 0


# --- parser wiring -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lesionattn",
        description="Attention-guided, fairness-aware lesion classification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset directory")
    _add_common(p)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--lesion-signal-strength", type=float, default=1.0)
    p.add_argument("--shortcut-strength", type=float, default=0.0)
    p.add_argument("--context-dependence", type=float, default=0.0)
    p.add_argument("--group-label-correlation", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="ingest a metadata CSV + image directory")
    _add_common(p)
    p.add_argument("--metadata", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--masks")
    p.add_argument("--malignant", default="HAM",
                   help="HAM, BCN, or a comma-separated diagnosis list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="write a train/validation/test assignment")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--ratios", default="0.6,0.2,0.2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    def add_train_flags(p):
        p.add_argument("--method", default="baseline",
                       choices=["baseline", "lesion_attn", "lesion_only"])
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--lambda-attn", type=float, default=0.5)
        p.add_argument("--rho", type=float, default=0.7)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--patience", type=int, default=10)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--resolution", type=int, default=64)
        p.add_argument("--threshold", type=float, default=0.5)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one configuration")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits", required=True)
    add_train_flags(p)
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsearch", help="train a grid of configurations x seeds")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits", required=True)
    add_train_flags(p)
    p.add_argument("--grid", required=True,
                   help='JSON, e.g. {"learning_rate": [1e-5, 1e-4, 1e-3]}')
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--run-root", required=True)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("evaluate", help="fairness report for a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits")
    p.add_argument("--part", default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--ci", default="none", choices=["none", "bootstrap"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select", help="frontier + final model from a candidates CSV")
    _add_common(p)
    p.add_argument("--candidates", required=True)
    p.add_argument("--policy", default="knee", choices=sorted(pareto.SELECTION_POLICIES))
    p.add_argument("--out", help="write candidates CSV with on_frontier flags")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("attn-audit", help="attention-lesion alignment stats + overlays")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits")
    p.add_argument("--part", default="test")
    p.add_argument("--mode", default="topk", choices=["topk", "otsu"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_attn_audit)

    p = sub.add_parser("plot", help="ROC / PR curves for a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits")
    p.add_argument("--part", default="test")
    p.add_argument("--stem", default="curves")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("report", help="bundle reports, stats, and artifact references")
    _add_common(p)
    p.add_argument("--fairness", action="append", metavar="NAME=PATH")
    p.add_argument("--alignment", action="append", metavar="NAME=PATH")
    p.add_argument("--file", action="append", metavar="NAME=PATH")
    p.add_argument("--seeds", type=int, nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def _apply_config_defaults(parser, argv):
    """Merge --config JSON under explicit flags, per subcommand."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    found, _ = probe.parse_known_args(argv)
    if not found.config:
        return argv
    payload = json.loads(Path(found.config).read_text())
    if not isinstance(payload, dict):
        raise ValueError(f"{found.config}: config must be a JSON object")
    provided = {k.replace("-", "_"): v for k, v in payload.items()}
    for action in parser._subparsers._group_actions:  # find the active subparser
        choices = getattr(action, "choices", None)
        if choices and argv and argv[0] in choices:
            sub = choices[argv[0]]
            sub.set_defaults(**provided)
            for sub_action in sub._actions:
                if sub_action.dest in provided:
                    sub_action.required = False
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except Exception as err:  # noqa: BLE001 - single reporting point
        print(
            json.dumps({"error": str(err), "type": type(err).__name__}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
