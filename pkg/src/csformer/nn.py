"""Parameterized layers: linear maps, batch norm, self-attention, adapters."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor


def init_params(shape, fan_in: int, fan_out: int, rng_seed) -> Tensor:
    """Xavier-uniform samples in ``[-a, a]`` with ``a = sqrt(6 / (fan_in + fan_out))``."""
    if fan_in <= 0 or fan_out <= 0:
        raise ConfigError(f"fan_in and fan_out must be positive, got {fan_in}, {fan_out}")
    a = math.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(rng_seed)
    return Tensor(rng.uniform(-a, a, size=tuple(shape)), requires_grad=True)


class Module:
    """Container that discovers parameters, buffers and submodules by attribute."""

    _buffers: tuple[str, ...] = ()
    training: bool = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "", _seen: Optional[set] = None) -> dict[str, Tensor]:
        """Learnable tensors keyed by dotted path; shared tensors appear once."""
        seen = set() if _seen is None else _seen
        out: dict[str, Tensor] = {}
        for name, value in self._children():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad and id(value) not in seen:
                    seen.add(id(value))
                    out[path] = value
            else:
                out.update(value.named_parameters(path + ".", seen))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def named_buffers(self, prefix: str = "", _seen: Optional[set] = None) -> dict[str, np.ndarray]:
        seen = set() if _seen is None else _seen
        out = {}
        if id(self) in seen:
            return out
        seen.add(id(self))
        for name in self._buffers:
            out[f"{prefix}{name}"] = getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                out.update(value.named_buffers(f"{prefix}{name}.", seen))
        return out

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, bias: bool = True, seed=0):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = init_params((in_dim, out_dim), in_dim, out_dim, seed)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(self, x)


def linear_forward(layer: Linear, x) -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != layer.in_dim:
        raise DimensionError(f"linear: expected last axis {layer.in_dim}, got shape {x.shape}")
    lead = x.shape[:-1]
    y = T.reshape(x, (-1, layer.in_dim)) @ layer.weight
    if layer.bias is not None:
        y = y + layer.bias
    return T.reshape(y, lead + (layer.out_dim,))


class BatchNorm(Module):
    """Per-feature normalization over every axis except the last.

    Running variance is tracked with the unbiased estimator, the output in train
    mode uses the biased batch variance.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        if eps <= 0:
            raise ConfigError("batch norm eps must be positive")
        if not 0.0 < momentum < 1.0:
            raise ConfigError("batch norm momentum must lie in (0, 1)")
        self.dim = dim
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm_forward(self, x)


def batchnorm_forward(bn: BatchNorm, x) -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != bn.dim:
        raise DimensionError(f"batch norm: expected last axis {bn.dim}, got shape {x.shape}")
    shape = x.shape
    flat = T.reshape(x, (-1, bn.dim))
    n = flat.shape[0]
    if bn.training:
        if n < 2:
            raise ContractError(f"batch norm in train mode needs at least 2 rows, got {n}")
        mu = T.mean(flat, axis=0, keepdims=True)
        centered = flat - mu
        var = T.mean(centered * centered, axis=0, keepdims=True)
        normed = centered / T.sqrt(var + bn.eps)
        m = bn.momentum
        bn.running_mean = (1.0 - m) * bn.running_mean + m * mu.data[0]
        bn.running_var = (1.0 - m) * bn.running_var + m * var.data[0] * n / (n - 1)
    else:
        scale = 1.0 / np.sqrt(bn.running_var + bn.eps)
        normed = (flat - bn.running_mean) * scale
    out = normed * bn.gamma + bn.beta
    return T.reshape(out, shape)


class MultiHeadSelfAttention(Module):
    """Standard multi-head self-attention with bias-free projections.

    The score of head ``j`` is ``softmax(H Wq_j (H Wk_j)^T / sqrt(D_k))``.
    """

    def __init__(self, dim: int, heads: int = 1, seed=0):
        if heads < 1 or dim % heads:
            raise ConfigError(f"head count {heads} must divide model dim {dim}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        seeds = np.random.SeedSequence(seed).spawn(4)
        self.wq = Linear(dim, dim, bias=False, seed=seeds[0])
        self.wk = Linear(dim, dim, bias=False, seed=seeds[1])
        self.wv = Linear(dim, dim, bias=False, seed=seeds[2])
        self.wo = Linear(dim, dim, bias=False, seed=seeds[3])

    def __call__(self, x: Tensor):
        return msa_forward(self, x)


def _split_heads(t: Tensor, heads: int) -> Tensor:
    b, s, d = t.shape
    return T.permute(T.reshape(t, (b, s, heads, d // heads)), (0, 2, 1, 3))


def msa_forward(w: MultiHeadSelfAttention, x) -> tuple[Tensor, np.ndarray]:
    """Attend over axis 1 of ``x`` (shape ``(B_eff, S, D)``).

    Returns the projected output and the detached score array of shape
    ``(B_eff, heads, S, S)``.
    """
    x = T.as_tensor(x)
    if x.ndim != 3 or x.shape[-1] != w.dim:
        raise DimensionError(f"attention: expected (B, S, {w.dim}), got {x.shape}")
    b, s, d = x.shape
    q = _split_heads(linear_forward(w.wq, x), w.heads)
    k = _split_heads(linear_forward(w.wk, x), w.heads)
    v = _split_heads(linear_forward(w.wv, x), w.heads)
    logits = (q @ T.swap_last(k)) * (1.0 / math.sqrt(w.head_dim))
    scores = T.softmax_lastaxis(logits)
    ctx = T.reshape(T.permute(scores @ v, (0, 2, 1, 3)), (b, s, d))
    return linear_forward(w.wo, ctx), scores.data


class Adapter(Module):
    """Bottleneck map ``up(relu(down(x)))``; the caller adds the residual."""

    activation = "relu"

    def __init__(self, dim: int, bottleneck: int, seed=0):
        if not 0 < bottleneck < dim and not (dim == 1 and bottleneck == 1):
            raise ConfigError(f"adapter bottleneck {bottleneck} must be below dim {dim}")
        seeds = np.random.SeedSequence(seed).spawn(2)
        self.down = Linear(dim, bottleneck, seed=seeds[0])
        self.up = Linear(bottleneck, dim, seed=seeds[1])

    def __call__(self, x: Tensor) -> Tensor:
        return adapter_forward(self, x)


def adapter_forward(a: Adapter, x) -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != a.down.in_dim:
        raise DimensionError(f"adapter: expected last axis {a.down.in_dim}, got shape {x.shape}")
    return linear_forward(a.up, T.relu(linear_forward(a.down, x)))
