"""Command-line entry point: ``csformer <command> [flags]``.

Every command writes its outputs under ``--out`` plus one ``manifest.json``
recording the argv, resolved configuration and timings; ``csformer replay``
re-executes a manifest into a new output location.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .data import (
    SeriesTable,
    SplitSpec,
    Standardizer,
    SyntheticSpec,
    load_csv,
    prepare_splits,
    synth_generate,
    write_csv,
)
from .errors import ConfigError, DataError, IncompatibleError, NumericsError
from .experiments import DEFAULT_VARIANTS, format_table, run_ablation, run_robustness
from .metrics import average_report, cross_dataset_eval, evaluate_report, write_reports
from .model import AblationConfig, CSformer, ModelConfig, export_attention_scores, model_forward
from .training import TrainConfig, fit, predict, write_history

log = logging.getLogger("csformer")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICS = 4


class UsageError(Exception):
    pass


# argument groups --------------------------------------------------------------

def _model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--lookback", type=int, default=96)
    g.add_argument("--horizon", type=int, default=96)
    g.add_argument("--dim", type=int, default=16, help="token dimension D")
    g.add_argument("--blocks", type=int, default=1, help="number of two-stage blocks M")
    g.add_argument("--heads", type=int, default=1)
    g.add_argument("--bottleneck", type=int, default=None, help="adapter width (default max(1, D/4))")
    g.add_argument("--no-revin", action="store_true")


def _ablation_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("ablation")
    g.add_argument("--no-channel-msa", action="store_true")
    g.add_argument("--no-sequence-msa", action="store_true")
    g.add_argument("--no-share", action="store_true")
    g.add_argument("--order", choices=("cs", "sc"), default="cs")
    g.add_argument("--no-channel-adapter", action="store_true")
    g.add_argument("--no-sequence-adapter", action="store_true")


def _train_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=1e-4)
    g.add_argument("--batch", type=int, default=64)
    g.add_argument("--epochs", type=int, default=10)
    g.add_argument("--patience", type=int, default=3)
    g.add_argument("--max-steps", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--train-stride", type=int, default=1, help="keep every k-th training window")


def _data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="CSV with optional leading date column")
    p.add_argument("--split", default="default", help="'default' (0.7,0.1,0.2), 'ett' (0.6,0.2,0.2) or three fractions")
    p.add_argument("--strict", action="store_true", help="drop windows that look back across a split border")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csformer", description="Two-stage attention forecaster toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a CSV")
    _data_args(p)
    _model_args(p)
    _ablation_args(p)
    _train_args(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="test-split metrics for one or more checkpoints")
    p.add_argument("--checkpoint", action="append", required=True)
    _data_args(p)
    p.add_argument("--cross-data", default=None, help="evaluate on this dataset's test split instead")
    p.add_argument("--horizons", default=None, help="comma list the checkpoint horizons must cover, e.g. 96,192,336,720")
    p.add_argument("--out", required=True, help="report file (JSON lines)")

    p = sub.add_parser("forecast", help="forecast the horizon after the last look-back rows")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scale", choices=("raw", "standardized"), default="raw")
    p.add_argument("--out", required=True, help="CSV of predictions")

    p = sub.add_parser("scores", help="export averaged attention maps as CSV")
    p.add_argument("--checkpoint", required=True)
    _data_args(p)
    p.add_argument("--max-windows", type=int, default=256)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("ablate", help="train and test each ablation variant")
    _data_args(p, required=False)
    p.add_argument("--synthetic-noise", type=float, default=None, help="use generated data with this noise std")
    p.add_argument("--points", type=int, default=20000)
    p.add_argument("--variants", default=",".join(DEFAULT_VARIANTS))
    _model_args(p)
    _train_args(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="write a synthetic sinusoid dataset")
    p.add_argument("--points", type=int, default=20000)
    p.add_argument("--vars", type=int, default=10)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--noisy-frac", type=float, default=0.9)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path")

    p = sub.add_parser("robustness", help="noise-level sweep on synthetic data")
    p.add_argument("--noise", default="0.1,0.5,1.0")
    p.add_argument("--points", type=int, default=20000)
    p.add_argument("--variants", default="full,no-channel-msa")
    _model_args(p)
    _train_args(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="replacement output location")
    return parser


# resolution helpers -----------------------------------------------------------

def _ablation_from(args) -> AblationConfig:
    if args.no_channel_msa and args.no_sequence_msa:
        raise UsageError("--no-channel-msa and --no-sequence-msa cannot both be set")
    return AblationConfig(
        channel_msa=not args.no_channel_msa,
        sequence_msa=not args.no_sequence_msa,
        share_parameters=not args.no_share,
        stage_order="C_then_S" if args.order == "cs" else "S_then_C",
        channel_adapter=not args.no_channel_adapter,
        sequence_adapter=not args.no_sequence_adapter,
    )


def _model_cfg_from(args, n_channels: int) -> ModelConfig:
    return ModelConfig(
        n_channels=n_channels,
        lookback=args.lookback,
        horizon=args.horizon,
        d_model=args.dim,
        n_blocks=args.blocks,
        n_heads=args.heads,
        adapter_bottleneck=args.bottleneck,
        revin=not args.no_revin,
    )


def _train_cfg_from(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
        patience=min(args.patience, args.epochs) if args.epochs else args.patience,
        seed=args.seed,
        max_steps=args.max_steps,
    )


def _dataset_id(path) -> str:
    return Path(path).stem


def _write_manifest(path: Path, args, argv, config: dict, inputs, outputs, started: float) -> None:
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_clock_seconds": time.perf_counter() - started,
        "version": __version__,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.suffix == "" else out.with_name(out.name + ".manifest.json")


# commands ---------------------------------------------------------------------

def cmd_train(args, argv, started) -> int:
    ablation = _ablation_from(args)
    table = load_csv(args.data)
    split = SplitSpec.parse(args.split)
    model_cfg = _model_cfg_from(args, table.n_channels)
    train_cfg = _train_cfg_from(args)
    prepared = prepare_splits(table, split, model_cfg.lookback, model_cfg.horizon, strict=args.strict, train_stride=args.train_stride)
    model = CSformer(model_cfg, ablation, seed=args.seed)
    result = fit(model, prepared.train, prepared.val, train_cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {
        "dataset": _dataset_id(args.data),
        "split": split.to_dict(),
        "strict": args.strict,
        "scaler": prepared.scaler.to_dict(),
        "channel_names": prepared.channel_names,
    }
    checkpoint.save(model, out / "checkpoint.bin", extra)
    write_history(result.history, out / "history.csv")
    config = {"model": model_cfg.to_dict(), "ablation": ablation.to_dict(), "train": train_cfg.to_dict(), "split": split.to_dict()}
    _write_manifest(out / "manifest.json", args, argv, config, [args.data],
                    [out / "checkpoint.bin", out / "history.csv"], started)
    print(f"trained {len(result.history)} epochs, {result.steps} steps; best val mse {result.best_val_mse:.6f}")
    return 0


def cmd_eval(args, argv, started) -> int:
    reports = []
    for path in args.checkpoint:
        model, extra = checkpoint.load(path)
        split = SplitSpec.parse(args.split) if args.split != "default" or "split" not in extra else SplitSpec(**extra["split"])
        source = extra.get("dataset", _dataset_id(path))
        if args.cross_data:
            target = load_csv(args.cross_data)
            reports.append(cross_dataset_eval(model, target, split, source, _dataset_id(args.cross_data), strict=args.strict))
        else:
            table = load_csv(args.data)
            if table.n_channels != model.config.n_channels:
                raise IncompatibleError(f"checkpoint expects {model.config.n_channels} channels, data has {table.n_channels}")
            prepared = prepare_splits(table, split, model.config.lookback, model.config.horizon, strict=args.strict)
            reports.append(evaluate_report(model, prepared.test, _dataset_id(args.data), source_dataset=source))
    if args.horizons:
        wanted = sorted(int(h) for h in args.horizons.split(","))
        have = sorted(r.horizon for r in reports)
        if wanted != have:
            raise UsageError(f"--horizons {wanted} but checkpoints cover {have}")
    if len(reports) > 1:
        reports.append(average_report(reports))
    out = Path(args.out)
    write_reports(reports, out)
    print(format_table(reports))
    inputs = list(args.checkpoint) + [args.cross_data or args.data]
    _write_manifest(_manifest_path(out), args, argv, {"split": args.split}, inputs, [out], started)
    return 0


def _last_window(model: CSformer, extra: dict, table: SeriesTable) -> tuple[np.ndarray, Standardizer]:
    cfg = model.config
    if table.n_channels != cfg.n_channels:
        raise IncompatibleError(f"checkpoint expects {cfg.n_channels} channels, data has {table.n_channels}")
    if table.rows < cfg.lookback:
        raise UsageError(f"forecast needs at least {cfg.lookback} rows, data has {table.rows}")
    scaler = Standardizer.from_dict(extra["scaler"]) if "scaler" in extra else Standardizer(np.zeros(cfg.n_channels), np.ones(cfg.n_channels))
    window = scaler.transform(table.values[-cfg.lookback:])
    return window.T[None, :, :], scaler


def cmd_forecast(args, argv, started) -> int:
    model, extra = checkpoint.load(args.checkpoint)
    table = load_csv(args.data)
    x, scaler = _last_window(model, extra, table)
    pred = predict(model, x)[0].T  # (T, N)
    if args.scale == "raw":
        pred = scaler.inverse(pred)
    out = Path(args.out)
    with open(out, "w") as fh:
        fh.write(",".join(["step"] + list(table.channel_names)) + "\n")
        for i, row in enumerate(pred, start=1):
            fh.write(",".join([str(i)] + [repr(float(v)) for v in row]) + "\n")
    _write_manifest(_manifest_path(out), args, argv, {"scale": args.scale}, [args.checkpoint, args.data], [out], started)
    return 0


def cmd_scores(args, argv, started) -> int:
    model, extra = checkpoint.load(args.checkpoint)
    table = load_csv(args.data)
    split = SplitSpec(**extra["split"]) if "split" in extra and args.split == "default" else SplitSpec.parse(args.split)
    prepared = prepare_splits(table, split, model.config.lookback, model.config.horizon, strict=args.strict)
    idx = np.arange(min(args.max_windows, len(prepared.test)))
    x, _ = prepared.test.batch(idx)
    model.eval()
    _, scores = model_forward(model, x)
    maps = export_attention_scores(scores)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (block, stage, head), mat in maps.items():
        path = out / f"block{block}_{stage}_head{head}.csv"
        np.savetxt(path, mat, delimiter=",", fmt="%.17g")
        written.append(path)
    _write_manifest(out / "manifest.json", args, argv, {"windows": len(idx)}, [args.checkpoint, args.data], written, started)
    print(f"wrote {len(written)} score maps to {out}")
    return 0


def cmd_ablate(args, argv, started) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if args.synthetic_noise is not None:
        spec = SyntheticSpec(n_points=args.points, noise_std=args.synthetic_noise, seed=args.seed)
        table = synth_generate(spec)
        dataset = f"synthetic-std{args.synthetic_noise:g}"
        from .experiments import ROBUSTNESS_SPLIT
        split = ROBUSTNESS_SPLIT
        inputs = []
    elif args.data:
        table = load_csv(args.data)
        dataset = _dataset_id(args.data)
        split = SplitSpec.parse(args.split)
        inputs = [args.data]
    else:
        raise UsageError("ablate needs --data or --synthetic-noise")
    model_cfg = _model_cfg_from(args, table.n_channels)
    train_cfg = _train_cfg_from(args)
    prepared = prepare_splits(table, split, model_cfg.lookback, model_cfg.horizon, strict=args.strict, train_stride=args.train_stride)
    runs = run_ablation(prepared, model_cfg, train_cfg, dataset, variants)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = [r.report for r in runs]
    for r in runs:
        if r.error:
            r.report.extra["error"] = r.error
    write_reports(reports, out / "reports.jsonl")
    text = format_table(reports)
    (out / "table.txt").write_text(text + "\n")
    print(text)
    config = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "split": split.to_dict(), "variants": variants}
    _write_manifest(out / "manifest.json", args, argv, config, inputs, [out / "reports.jsonl", out / "table.txt"], started)
    return 0


def cmd_synth(args, argv, started) -> int:
    try:
        spec = SyntheticSpec(
            n_points=args.points,
            n_vars=args.vars,
            amplitudes=SyntheticSpec.amplitudes[: args.vars] if args.vars <= 10 else tuple(range(1, args.vars + 1)),
            phases=SyntheticSpec.phases[: args.vars] if args.vars <= 10 else tuple(0.2 * i for i in range(args.vars)),
            periods=SyntheticSpec.periods[: args.vars] if args.vars <= 10 else tuple(range(1, args.vars + 1)),
            noise_std=args.noise_std,
            noisy_frac=args.noisy_frac,
            seed=args.seed,
            dt=args.dt,
        )
    except DataError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    write_csv(synth_generate(spec), out)
    _write_manifest(_manifest_path(out), args, argv, {"synthetic": spec.to_dict()}, [], [out], started)
    return 0


def cmd_robustness(args, argv, started) -> int:
    levels = [float(s) for s in args.noise.split(",") if s.strip()]
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    model_cfg = _model_cfg_from(args, 10)
    train_cfg = _train_cfg_from(args)
    reports = run_robustness(levels, model_cfg, train_cfg, SyntheticSpec(n_points=args.points, seed=args.seed),
                             variants, train_stride=args.train_stride)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_reports(reports, out / "reports.jsonl")
    text = format_table(reports, columns=("dataset", "variant", "mse", "mae", "parameter_count", "runtime_seconds"))
    (out / "table.txt").write_text(text + "\n")
    print(text)
    config = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "noise": levels, "variants": variants}
    _write_manifest(out / "manifest.json", args, argv, config, [], [out / "reports.jsonl", out / "table.txt"], started)
    return 0


def cmd_replay(args, argv, started) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    old = list(manifest["argv"])
    if "--out" not in old:
        raise UsageError("manifest argv has no --out to replace")
    i = old.index("--out")
    old[i + 1] = args.out
    return main(old)


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "forecast": cmd_forecast,
    "scores": cmd_scores,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
    "robustness": cmd_robustness,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        return COMMANDS[args.command](args, argv, started)
    except (UsageError, ConfigError) as exc:
        print(f"csformer {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"csformer {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"csformer {args.command}: numerics error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
