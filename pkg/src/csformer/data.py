"""CSV ingestion, chronological splits, sliding windows and synthetic sinusoids."""

from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng
from .errors import DataError


@dataclass
class SeriesTable:
    """Chronologically ordered observations, ``values`` has shape ``(rows, N)``."""

    values: np.ndarray
    channel_names: list[str]
    timestamps: Optional[list[str]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series values must be 2-D, got shape {self.values.shape}")
        if len(self.channel_names) != self.values.shape[1]:
            raise DataError("channel name count does not match the value columns")
        if self.timestamps is not None and len(self.timestamps) != self.values.shape[0]:
            raise DataError("timestamp count does not match the row count")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesTable":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return SeriesTable(self.values[start:stop], list(self.channel_names), ts)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, has_timestamp_column: Optional[bool] = None, forward_fill: bool = False) -> SeriesTable:
    """Read a header-plus-rows CSV into a :class:`SeriesTable`.

    With ``has_timestamp_column=None`` the first column is treated as a
    timestamp when it is named ``date`` or its first value is not numeric.
    Empty or ``nan`` cells are an error unless ``forward_fill`` is set.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows below the header")
    if has_timestamp_column is None:
        has_timestamp_column = header[0].strip().lower() == "date" or not _is_number(body[0][0])
    first = 1 if has_timestamp_column else 0
    names = [h.strip() for h in header[first:]]
    if not names:
        raise DataError(f"{path}: no numeric channel columns")

    values = np.empty((len(body), len(names)))
    timestamps = [] if has_timestamp_column else None
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise DataError(f"{path}:{line}: expected {len(header)} columns, found {len(row)}")
        if has_timestamp_column:
            timestamps.append(row[0])
        for j, cell in enumerate(row[first:]):
            cell = cell.strip()
            if cell == "" or cell.lower() == "nan":
                if not forward_fill or i == 0:
                    raise DataError(f"{path}:{line}: missing value in column {names[j]!r}")
                values[i, j] = values[i - 1, j]
                continue
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}:{line}: non-numeric value {cell!r} in column {names[j]!r}") from None
            if not math.isfinite(values[i, j]):
                raise DataError(f"{path}:{line}: non-finite value in column {names[j]!r}")
    return SeriesTable(values, names, timestamps)


def write_csv(table: SeriesTable, path) -> None:
    """Write ``table`` with ``repr`` floats so reading it back is exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = (["date"] if table.timestamps is not None else []) + list(table.channel_names)
        w.writerow(header)
        for i, row in enumerate(table.values):
            cells = [repr(float(v)) for v in row]
            if table.timestamps is not None:
                cells.insert(0, table.timestamps[i])
            w.writerow(cells)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise DataError(f"split fractions must be non-negative and sum to 1, got {fracs}")

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        presets = {"default": cls(0.7, 0.1, 0.2), "ett": cls(0.6, 0.2, 0.2)}
        if text in presets:
            return presets[text]
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise DataError(f"split must be a preset or three comma-separated fractions, got {text!r}")
        return cls(*parts)

    def to_dict(self) -> dict:
        return asdict(self)


def split_bounds(rows: int, spec: SplitSpec) -> tuple[int, int]:
    """Row indices ``(train_end, val_end)``; floors for val/test, remainder to train."""
    n_val = int(math.floor(rows * spec.val_frac + 1e-9))
    n_test = int(math.floor(rows * spec.test_frac + 1e-9))
    n_train = rows - n_val - n_test
    return n_train, n_train + n_val


def split_chrono(table: SeriesTable, spec: SplitSpec) -> tuple[SeriesTable, SeriesTable, SeriesTable]:
    a, b = split_bounds(table.rows, spec)
    return table.slice(0, a), table.slice(a, b), table.slice(b, table.rows)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    constant: list[int] = field(default_factory=list)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": list(self.constant)}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64), list(d.get("constant", [])))


def fit_standardizer(train: SeriesTable) -> Standardizer:
    if train.rows == 0:
        raise DataError("cannot standardize from an empty train split")
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    constant = [int(i) for i in np.flatnonzero(std == 0)]
    std = np.where(std == 0, 1.0, std)
    return Standardizer(mean, std, constant)


def standardize(table: SeriesTable, stats_from: SeriesTable) -> tuple[SeriesTable, Standardizer]:
    """Z-score ``table`` with population statistics of ``stats_from``.

    Channels that are constant in ``stats_from`` get a unit scale.
    """
    st = fit_standardizer(stats_from)
    return replace(table, values=st.transform(table.values)), st


@dataclass
class WindowSample:
    lookback: np.ndarray  # (N, L)
    horizon: np.ndarray  # (N, T)
    origin_row: int


class WindowSet(Sequence):
    """Sliding windows over a value array, materialized lazily.

    Behaves as a sequence of :class:`WindowSample`; :meth:`batch` gathers many
    windows at once as ``(B, N, L)`` and ``(B, N, T)`` arrays.
    """

    def __init__(self, values: np.ndarray, lookback: int, horizon: int, origins: np.ndarray, row_offset: int = 0):
        self.values = values
        self.lookback = lookback
        self.horizon = horizon
        self.origins = np.asarray(origins, dtype=np.int64)
        self.row_offset = row_offset

    def __len__(self) -> int:
        return len(self.origins)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return WindowSet(self.values, self.lookback, self.horizon, self.origins[i], self.row_offset)
        o = int(self.origins[i])
        lb = self.values[o:o + self.lookback].T
        hz = self.values[o + self.lookback:o + self.lookback + self.horizon].T
        return WindowSample(lb, hz, o + self.row_offset)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        o = self.origins[np.asarray(idx)]
        span = np.arange(self.lookback + self.horizon)
        block = self.values[o[:, None] + span]  # (B, L+T, N)
        block = np.ascontiguousarray(block.transpose(0, 2, 1))
        return block[:, :, :self.lookback], block[:, :, self.lookback:]

    def subsample(self, stride: int) -> "WindowSet":
        return self[::stride]


def make_windows(table, lookback: int, horizon: int, stride: int = 1, row_offset: int = 0) -> WindowSet:
    values = table.values if isinstance(table, SeriesTable) else np.asarray(table, dtype=np.float64)
    rows = values.shape[0]
    if stride < 1:
        raise DataError("window stride must be positive")
    if rows < lookback + horizon:
        raise DataError(f"{rows} rows cannot hold a window of lookback {lookback} + horizon {horizon}")
    origins = np.arange(0, rows - lookback - horizon + 1, stride)
    return WindowSet(values, lookback, horizon, origins, row_offset)


@dataclass
class PreparedData:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    scaler: Standardizer
    channel_names: list[str]
    bounds: tuple[int, int]


def prepare_splits(
    table: SeriesTable,
    spec: SplitSpec,
    lookback: int,
    horizon: int,
    strict: bool = False,
    scale: bool = True,
    train_stride: int = 1,
) -> PreparedData:
    """Split, standardize with train statistics and window all three splits.

    Unless ``strict``, validation and test windows may look back into the
    preceding split, so their first horizon starts right at the split border.
    """
    a, b = split_bounds(table.rows, spec)
    if scale:
        scaler = fit_standardizer(table.slice(0, a))
    else:
        n = table.n_channels
        scaler = Standardizer(np.zeros(n), np.ones(n))
    values = scaler.transform(table.values)

    def windows(start, stop, stride=1):
        lo = start if strict else max(0, start - lookback)
        return make_windows(values[lo:stop], lookback, horizon, stride, row_offset=lo)

    return PreparedData(
        train=make_windows(values[:a], lookback, horizon, train_stride),
        val=windows(a, b),
        test=windows(b, table.rows),
        scaler=scaler,
        channel_names=list(table.channel_names),
        bounds=(a, b),
    )


@dataclass(frozen=True)
class SyntheticSpec:
    n_points: int = 20000
    n_vars: int = 10
    amplitudes: tuple[float, ...] = (1, 2, 4, 6, 8, 10, 12, 14, 16, 18)
    phases: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8)
    periods: tuple[float, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
    noise_std: float = 0.0
    noisy_frac: float = 0.9
    seed: int = 0
    dt: float = 0.01

    def __post_init__(self):
        for name in ("amplitudes", "phases", "periods"):
            if len(getattr(self, name)) != self.n_vars:
                raise DataError(f"{name} needs {self.n_vars} entries, got {len(getattr(self, name))}")
        if not 0.0 <= self.noisy_frac <= 1.0:
            raise DataError("noisy_frac must lie in [0, 1]")
        if self.noise_std < 0:
            raise DataError("noise_std must be non-negative")
        if self.n_points < 1:
            raise DataError("n_points must be positive")
        if any(p == 0 for p in self.periods):
            raise DataError("periods must be non-zero")

    def to_dict(self) -> dict:
        return asdict(self)


def clean_sinusoids(spec: SyntheticSpec) -> np.ndarray:
    t = np.arange(spec.n_points, dtype=np.float64)[:, None] * spec.dt
    amp = np.asarray(spec.amplitudes, dtype=np.float64)
    per = np.asarray(spec.periods, dtype=np.float64)
    ph = np.asarray(spec.phases, dtype=np.float64)
    return amp * np.sin(2.0 * np.pi * t / per + ph)


def add_gaussian_noise(x: np.ndarray, std: float, frac: float, seed) -> np.ndarray:
    """Add zero-mean Gaussian noise to the first ``floor(frac * rows)`` rows."""
    x = np.array(x, dtype=np.float64)
    rows = int(math.floor(x.shape[0] * frac + 1e-9))
    if std == 0 or rows == 0:
        return x
    gen = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x[:rows] += gen.normal(0.0, std, size=(rows,) + x.shape[1:])
    return x


def synth_generate(spec: SyntheticSpec) -> SeriesTable:
    values = clean_sinusoids(spec)
    values = add_gaussian_noise(values, spec.noise_std, spec.noisy_frac, rng.stream(spec.seed, "noise"))
    names = [f"var{i + 1}" for i in range(spec.n_vars)]
    return SeriesTable(values, names, None)
