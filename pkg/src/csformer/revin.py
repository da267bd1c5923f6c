"""Reversible instance normalization over the look-back axis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import InversionError
from .nn import Module
from .tensor import Tensor


class RevinParams(Module):
    def __init__(self, n_channels: int, eps: float = 1e-5):
        if eps <= 0:
            raise ValueError("revin eps must be positive")
        self.n_channels = n_channels
        self.eps = eps
        self.gamma = Tensor(np.ones(n_channels), requires_grad=True)
        self.beta = Tensor(np.zeros(n_channels), requires_grad=True)


@dataclass
class RevinStats:
    """Per-window, per-channel statistics, each of shape ``(B, N)``."""

    mean: np.ndarray
    var: np.ndarray


def revin_normalize(p: RevinParams, x) -> tuple[Tensor, RevinStats]:
    """Standardize each ``x[b, k, :]`` and apply the per-channel affine map.

    The statistics are constants with respect to differentiation; ``var`` is
    the population variance.
    """
    x = T.as_tensor(x)
    mean = x.data.mean(axis=-1)
    var = x.data.var(axis=-1)
    std = np.sqrt(var + p.eps)[..., None]
    y = (x - mean[..., None]) / std
    y = y * T.reshape(p.gamma, (p.n_channels, 1)) + T.reshape(p.beta, (p.n_channels, 1))
    return y, RevinStats(mean=mean, var=var)


def revin_denormalize(p: RevinParams, yhat, stats: RevinStats) -> Tensor:
    gamma = p.gamma.data
    small = np.flatnonzero(np.abs(gamma) < 1e-12)
    if small.size:
        raise InversionError(f"revin gamma is zero for channel {int(small[0])}; cannot invert")
    yhat = T.as_tensor(yhat)
    x = (yhat - T.reshape(p.beta, (p.n_channels, 1))) / T.reshape(p.gamma, (p.n_channels, 1))
    return x * np.sqrt(stats.var + p.eps)[..., None] + stats.mean[..., None]
