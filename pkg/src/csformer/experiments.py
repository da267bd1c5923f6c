"""Variant training runs shared by the ablation and robustness commands."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from .data import PreparedData, SplitSpec, SyntheticSpec, prepare_splits, synth_generate
from .metrics import MetricsReport
from .model import AblationConfig, CSformer, ModelConfig, count_parameters, variant
from .training import FitResult, TrainConfig, evaluate, fit

log = logging.getLogger(__name__)

DEFAULT_VARIANTS = (
    "full",
    "no-channel-msa",
    "no-sequence-msa",
    "no-share",
    "order-sc",
    "no-adapters",
    "no-channel-adapter",
    "no-sequence-adapter",
)

# Train on the first 80%, validate on the next 10% (both noisy), test on the
# clean final 10%.
ROBUSTNESS_SPLIT = SplitSpec(0.8, 0.1, 0.1)


@dataclass
class VariantRun:
    report: MetricsReport
    fit: Optional[FitResult]
    model: Optional[CSformer]
    error: Optional[str] = None


def train_variant(
    prepared: PreparedData,
    model_cfg: ModelConfig,
    ablation: AblationConfig,
    train_cfg: TrainConfig,
    dataset: str,
    variant_name: Optional[str] = None,
) -> VariantRun:
    name = variant_name or ablation.tag()
    t0 = time.perf_counter()
    model = CSformer(model_cfg, ablation, seed=train_cfg.seed)
    result = fit(model, prepared.train, prepared.val, train_cfg)
    mse, mae = evaluate(model, prepared.test)
    report = MetricsReport(
        dataset=dataset,
        horizon=model_cfg.horizon,
        mse=mse,
        mae=mae,
        variant=name,
        runtime_seconds=time.perf_counter() - t0,
        parameter_count=count_parameters(model),
        extra={
            "best_epoch": result.best_epoch,
            "best_val_mse": result.best_val_mse if result.history else None,
            "steps": result.steps,
            "epochs": len(result.history),
        },
    )
    log.info("%s %s: mse=%.6f mae=%.6f params=%d", dataset, name, mse, mae, report.parameter_count)
    return VariantRun(report, result, model)


def run_ablation(
    prepared: PreparedData,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: str,
    variants: Iterable[str] = DEFAULT_VARIANTS,
) -> list[VariantRun]:
    """Train and test each named variant with the same seed; failures are recorded, not raised."""
    runs = []
    for name in variants:
        try:
            runs.append(train_variant(prepared, model_cfg, variant(name), train_cfg, dataset, name))
        except Exception as exc:  # noqa: BLE001 - a failed variant must not stop the table
            log.error("variant %s failed: %s", name, exc)
            report = MetricsReport(dataset=dataset, horizon=model_cfg.horizon, mse=float("nan"), mae=float("nan"), variant=name)
            runs.append(VariantRun(report, None, None, error=f"{type(exc).__name__}: {exc}"))
    return runs


def prepare_synthetic(spec: SyntheticSpec, lookback: int, horizon: int, train_stride: int = 1) -> PreparedData:
    table = synth_generate(spec)
    return prepare_splits(table, ROBUSTNESS_SPLIT, lookback, horizon, train_stride=train_stride)


def run_robustness(
    noise_levels: Iterable[float],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    base_spec: SyntheticSpec = SyntheticSpec(),
    variants: Iterable[str] = ("full", "no-channel-msa"),
    train_stride: int = 1,
) -> list[MetricsReport]:
    """Test MSE of each variant on clean tail data after training on noisy data."""
    reports = []
    variants = tuple(variants)
    for std in noise_levels:
        spec = replace(base_spec, noise_std=float(std))
        prepared = prepare_synthetic(spec, model_cfg.lookback, model_cfg.horizon, train_stride)
        cfg = replace(model_cfg, n_channels=spec.n_vars)
        for run in run_ablation(prepared, cfg, train_cfg, f"synthetic-std{std:g}", variants):
            run.report.extra["noise_std"] = float(std)
            reports.append(run.report)
    return reports


def format_table(reports: list[MetricsReport], columns=("dataset", "variant", "horizon", "mse", "mae", "parameter_count", "runtime_seconds")) -> str:
    """Fixed-width text table, one row per report."""
    rows = [list(columns)]
    for r in reports:
        row = []
        for c in columns:
            v = getattr(r, c)
            row.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(columns))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows)
