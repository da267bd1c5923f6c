"""Shared training fixtures."""

import numpy as np

from csformer.data import SeriesTable, SplitSpec, prepare_splits
from csformer.model import CSformer, ModelConfig
from csformer.training import TrainConfig, evaluate, fit


def sinusoid_table(rows: int = 600, period: float = 24.0) -> SeriesTable:
    t = np.arange(rows, dtype=np.float64)
    return SeriesTable(np.sin(2.0 * np.pi * t / period)[:, None], ["sine"])


def convergence_run(max_steps: int = 2000, seed: int = 0):
    """Fit a tiny model to one noiseless sinusoid.

    Returns ``(fit_result, train_mse)`` where ``train_mse`` is measured in eval
    mode over every training window after the best state is restored.
    """
    prepared = prepare_splits(sinusoid_table(), SplitSpec(0.7, 0.1, 0.2), lookback=24, horizon=8, scale=False)
    model = CSformer(ModelConfig(n_channels=1, lookback=24, horizon=8, d_model=8), seed=seed)
    epochs = 1000
    tc = TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=epochs, patience=epochs, seed=seed, max_steps=max_steps)
    result = fit(model, prepared.train, prepared.val, tc)
    train_mse, _ = evaluate(model, prepared.train)
    return result, train_mse
