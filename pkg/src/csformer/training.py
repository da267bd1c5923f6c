"""MSE training with Adam, validation-based early stopping and best-state restore."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import rng
from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, NumericsError
from .model import CSformer, model_forward
from .tensor import GradTape, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigError("learning_rate and batch_size must be positive")
        if self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("max_epochs must be non-negative and patience positive")
        if self.max_epochs and self.patience > self.max_epochs:
            raise ConfigError("patience cannot exceed max_epochs")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be positive when given")

    def to_dict(self) -> dict:
        return asdict(self)


def mse_loss(pred, target) -> Tensor:
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return T.mean(diff * diff)


class Adam:
    """Bias-corrected Adam over a name-to-tensor parameter mapping."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        missing = [name for name, p in params.items() if p.grad is None]
        if missing:
            raise ContractError(f"no gradient for parameters: {', '.join(missing)}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(state: Adam, params: dict[str, Tensor], lr: float) -> None:
    state.step(params, lr)


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    steps: int


@dataclass
class FitResult:
    model: CSformer
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_mse: float = float("inf")
    steps: int = 0


def snapshot(model: CSformer) -> dict[str, np.ndarray]:
    state = {f"param:{k}": p.data.copy() for k, p in model.named_parameters().items()}
    state.update({f"buffer:{k}": np.array(b, copy=True) for k, b in model.named_buffers().items()})
    return state


def restore(model: CSformer, state: dict[str, np.ndarray]) -> None:
    for k, p in model.named_parameters().items():
        p.data[...] = state[f"param:{k}"]
    owners = {}
    for m_name, module in _named_modules(model):
        for b in module._buffers:
            owners[f"{m_name}{b}"] = (module, b)
    for k, (module, b) in owners.items():
        setattr(module, b, state[f"buffer:{k}"].copy())


def _named_modules(module, prefix=""):
    yield prefix, module
    for name, child in module._children():
        if not isinstance(child, Tensor):
            yield from _named_modules(child, f"{prefix}{name}.")


def predict(model: CSformer, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode forecasts for ``x`` of shape ``(B, N, L)``; training mode is restored."""
    was_training = model.training
    model.eval()
    try:
        out = [model_forward(model, x[i:i + batch_size])[0].data for i in range(0, len(x), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(out, axis=0)


def evaluate(model: CSformer, windows, batch_size: int = 256) -> tuple[float, float]:
    """Element-averaged (MSE, MAE) over all windows in eval mode."""
    if len(windows) == 0:
        raise ContractError("evaluate needs at least one window")
    sq = ab = 0.0
    count = 0
    for start in range(0, len(windows), batch_size):
        x, y = windows.batch(np.arange(start, min(start + batch_size, len(windows))))
        err = predict(model, x, batch_size) - y
        sq += float(np.sum(err * err))
        ab += float(np.sum(np.abs(err)))
        count += err.size
    return sq / count, ab / count


def fit(model: CSformer, train_windows, val_windows, tc: TrainConfig) -> FitResult:
    """Train ``model`` in place and leave it at its best-validation state."""
    result = FitResult(model=model)
    if tc.max_epochs == 0:
        return result
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise ContractError("training and validation windows must be non-empty")
    cfg = model.config
    if train_windows.n_channels != cfg.n_channels or train_windows.lookback != cfg.lookback or train_windows.horizon != cfg.horizon:
        raise ConfigError("windows do not match the model's channel count, lookback or horizon")

    params = model.named_parameters()
    opt = Adam()
    shuffle = rng.stream(tc.seed, "shuffle")
    best_state = snapshot(model)
    stale = 0
    n = len(train_windows)
    for epoch in range(1, tc.max_epochs + 1):
        model.train()
        order = shuffle.permutation(n)
        total = 0.0
        seen = 0
        for start in range(0, n, tc.batch_size):
            if tc.max_steps is not None and result.steps >= tc.max_steps:
                break
            x, y = train_windows.batch(order[start:start + tc.batch_size])
            model.zero_grad()
            with GradTape() as tape:
                pred, _ = model_forward(model, x)
                loss = mse_loss(pred, y)
            value = loss.item()
            if not np.isfinite(value):
                restore(model, best_state)
                raise NumericsError(f"non-finite training loss at epoch {epoch}, step {result.steps + 1}")
            tape.backward(loss)
            opt.step(params, tc.learning_rate)
            result.steps += 1
            total += value * len(x)
            seen += len(x)
        if seen == 0:
            break
        val_mse, _ = evaluate(model, val_windows)
        result.history.append(EpochRecord(epoch, total / seen, val_mse, result.steps))
        log.info("epoch %d train_mse=%.6f val_mse=%.6f", epoch, total / seen, val_mse)
        if val_mse < result.best_val_mse:
            result.best_val_mse = val_mse
            result.best_epoch = epoch
            best_state = snapshot(model)
            stale = 0
        else:
            stale += 1
            if stale >= tc.patience:
                break
        if tc.max_steps is not None and result.steps >= tc.max_steps:
            break
    restore(model, best_state)
    model.eval()
    return result


def write_history(history: list[EpochRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_mse,val_mse,steps\n")
        for r in history:
            fh.write(f"{r.epoch},{r.train_mse!r},{r.val_mse!r},{r.steps}\n")
