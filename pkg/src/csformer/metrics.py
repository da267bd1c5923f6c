"""Forecast metrics, report records, a ridge linear reference and cross-dataset evaluation."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import SeriesTable, SplitSpec, prepare_splits
from .errors import DimensionError, IncompatibleError
from .model import CSformer, count_parameters
from .training import evaluate


def compute_mse_mae(pred, target) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"metrics: prediction {pred.shape} vs target {target.shape}")
    err = pred - target
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


@dataclass
class MetricsReport:
    dataset: str
    horizon: int
    mse: float
    mae: float
    variant: str = "full"
    runtime_seconds: float = 0.0
    parameter_count: int = 0
    source_dataset: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsReport":
        return cls(**json.loads(line))


def write_reports(reports, path) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def read_reports(path) -> list[MetricsReport]:
    with open(path) as fh:
        return [MetricsReport.from_json(line) for line in fh if line.strip()]


def average_report(reports: list[MetricsReport], label: str = "avg") -> MetricsReport:
    first = reports[0]
    return MetricsReport(
        dataset=first.dataset,
        horizon=0,
        mse=float(np.mean([r.mse for r in reports])),
        mae=float(np.mean([r.mae for r in reports])),
        variant=first.variant,
        runtime_seconds=float(sum(r.runtime_seconds for r in reports)),
        parameter_count=first.parameter_count,
        source_dataset=first.source_dataset,
        extra={"label": label, "horizons": [r.horizon for r in reports]},
    )


class LinearBaseline:
    """Ridge regression from look-back to horizon, one map shared by all channels."""

    def __init__(self, ridge: float = 1e-3):
        self.ridge = ridge
        self.weight: Optional[np.ndarray] = None  # (L, T)

    def fit(self, windows) -> "LinearBaseline":
        x, y = windows.batch(np.arange(len(windows)))
        xs = x.reshape(-1, x.shape[-1])
        ys = y.reshape(-1, y.shape[-1])
        gram = xs.T @ xs + self.ridge * np.eye(xs.shape[1])
        self.weight = np.linalg.solve(gram, xs.T @ ys)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.weight


def linear_baseline_fit(train_windows, ridge: float = 1e-3) -> LinearBaseline:
    return LinearBaseline(ridge).fit(train_windows)


def evaluate_report(model: CSformer, windows, dataset: str, source_dataset: Optional[str] = None, extra=None) -> MetricsReport:
    t0 = time.perf_counter()
    mse, mae = evaluate(model, windows)
    return MetricsReport(
        dataset=dataset,
        horizon=model.config.horizon,
        mse=mse,
        mae=mae,
        variant=model.ablation.tag(),
        runtime_seconds=time.perf_counter() - t0,
        parameter_count=count_parameters(model),
        source_dataset=source_dataset,
        extra=dict(extra or {}),
    )


def cross_dataset_eval(
    model: CSformer,
    target: SeriesTable,
    split: SplitSpec,
    source_id: str,
    target_id: str,
    strict: bool = False,
) -> MetricsReport:
    """Test a model trained on one dataset against another dataset's test split.

    The target is standardized with its own train-split statistics.
    """
    if target.n_channels != model.config.n_channels:
        raise IncompatibleError(
            f"model expects {model.config.n_channels} channels, dataset {target_id!r} has {target.n_channels}"
        )
    prepared = prepare_splits(target, split, model.config.lookback, model.config.horizon, strict=strict)
    return evaluate_report(model, prepared.test, dataset=target_id, source_dataset=source_id)
