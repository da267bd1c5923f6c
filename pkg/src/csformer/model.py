"""The CSformer forecaster: embedding, two-stage attention blocks and a linear head.

Internal activations use the layout ``(B, N, L, D)``: batch, channel, time step,
token feature. The channel stage folds ``B * L`` into the batch and attends over
the ``N`` channels of each time step; the sequence stage folds ``B * N`` and
attends over the ``L`` time steps of each channel.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import rng
from . import tensor as T
from .errors import ConfigError, NumericsError
from .nn import Adapter, BatchNorm, Linear, Module, MultiHeadSelfAttention, adapter_forward, batchnorm_forward, msa_forward
from .revin import RevinParams, revin_denormalize, revin_normalize
from .tensor import Tensor

CHANNEL = "channel"
SEQUENCE = "sequence"
C_THEN_S = "C_then_S"
S_THEN_C = "S_then_C"


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int
    lookback: int = 96
    horizon: int = 96
    d_model: int = 16
    n_blocks: int = 1
    n_heads: int = 1
    adapter_bottleneck: Optional[int] = None
    revin: bool = True
    dropout: float = 0.0
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("n_channels", "lookback", "horizon", "d_model", "n_blocks", "n_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"n_heads={self.n_heads} does not divide d_model={self.d_model}")
        if self.adapter_bottleneck is not None and self.adapter_bottleneck < 1:
            raise ConfigError("adapter_bottleneck must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def bottleneck(self) -> int:
        if self.adapter_bottleneck is not None:
            return self.adapter_bottleneck
        return max(1, self.d_model // 4)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class AblationConfig:
    """Which architectural components are active."""

    channel_msa: bool = True
    sequence_msa: bool = True
    share_parameters: bool = True
    stage_order: str = C_THEN_S
    channel_adapter: bool = True
    sequence_adapter: bool = True

    def __post_init__(self):
        if not (self.channel_msa or self.sequence_msa):
            raise ConfigError("at least one attention stage must stay enabled")
        if self.stage_order not in (C_THEN_S, S_THEN_C):
            raise ConfigError(f"unknown stage order {self.stage_order!r}")

    @property
    def stages(self) -> tuple[str, ...]:
        order = (CHANNEL, SEQUENCE) if self.stage_order == C_THEN_S else (SEQUENCE, CHANNEL)
        return tuple(s for s in order if self.stage_enabled(s))

    def stage_enabled(self, stage: str) -> bool:
        return self.channel_msa if stage == CHANNEL else self.sequence_msa

    def adapter_enabled(self, stage: str) -> bool:
        return self.channel_adapter if stage == CHANNEL else self.sequence_adapter

    @property
    def separate_msa(self) -> bool:
        return not self.share_parameters and self.channel_msa and self.sequence_msa

    def tag(self) -> str:
        for name, cfg in VARIANTS.items():
            if cfg == self:
                return name
        parts = [k for k, v in asdict(self).items() if v is False]
        if self.stage_order != C_THEN_S:
            parts.append("order-sc")
        return "custom:" + ",".join(parts)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AblationConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


VARIANTS: dict[str, AblationConfig] = {
    "full": AblationConfig(),
    "no-channel-msa": AblationConfig(channel_msa=False),
    "no-sequence-msa": AblationConfig(sequence_msa=False),
    "no-share": AblationConfig(share_parameters=False),
    "order-sc": AblationConfig(stage_order=S_THEN_C),
    "no-adapters": AblationConfig(channel_adapter=False, sequence_adapter=False),
    "no-channel-adapter": AblationConfig(channel_adapter=False),
    "no-sequence-adapter": AblationConfig(sequence_adapter=False),
}


def variant(name: str) -> AblationConfig:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown ablation variant {name!r}; choose from {sorted(VARIANTS)}") from None


class Block(Module):
    """One two-stage block.

    ``msa`` serves both stages when parameters are shared; otherwise the
    sequence stage owns ``sequence_msa``. Components of disabled stages or
    adapters are not built.
    """

    def __init__(self, cfg: ModelConfig, ablation: AblationConfig, seed: int, index: int):
        d = cfg.d_model
        prefix = f"blocks.{index}"
        self.msa = MultiHeadSelfAttention(d, cfg.n_heads, seed=rng.derived_int(seed, f"{prefix}.msa"))
        self.sequence_msa = None
        if ablation.separate_msa:
            self.sequence_msa = MultiHeadSelfAttention(d, cfg.n_heads, seed=rng.derived_int(seed, f"{prefix}.sequence_msa"))
        for stage in (CHANNEL, SEQUENCE):
            norm = adapter = None
            if ablation.stage_enabled(stage):
                norm = BatchNorm(d, eps=cfg.eps)
                if ablation.adapter_enabled(stage):
                    adapter = Adapter(d, cfg.bottleneck, seed=rng.derived_int(seed, f"{prefix}.{stage}_adapter"))
            setattr(self, f"{stage}_norm", norm)
            setattr(self, f"{stage}_adapter", adapter)

    def msa_for(self, stage: str) -> MultiHeadSelfAttention:
        if stage == SEQUENCE and self.sequence_msa is not None:
            return self.sequence_msa
        return self.msa


class CSformer(Module):
    def __init__(self, config: ModelConfig, ablation: AblationConfig = AblationConfig(), seed: int = 0):
        self.config = config
        self.ablation = ablation
        self.seed = seed
        d = config.d_model
        self.nu = T.Tensor(rng.stream(seed, "nu").uniform(-1.0, 1.0, size=(1, d)), requires_grad=True)
        self.blocks = [Block(config, ablation, seed, i) for i in range(config.n_blocks)]
        self.head = Linear(config.lookback * d, config.horizon, seed=rng.derived_int(seed, "head"))
        self.revin = RevinParams(config.n_channels, eps=config.eps) if config.revin else None
        self._dropout_rng = rng.stream(seed, "dropout")

    def __call__(self, x, ablation: Optional[AblationConfig] = None):
        return model_forward(self, x, ablation)

    def dropout(self, x: Tensor) -> Tensor:
        p = self.config.dropout
        if not self.training or p == 0.0:
            return x
        keep = self._dropout_rng.random(x.shape) >= p
        return x * (keep / (1.0 - p))


def embed_augment(nu, x) -> Tensor:
    """Lift ``x`` of shape ``(B, N, L)`` to ``(B, N, L, D)`` via ``x[..., None] * nu``."""
    x = T.as_tensor(x)
    return T.reshape(x, x.shape + (1,)) * nu


def _residual_stage(block: Block, stage: str, h: Tensor, ablation: AblationConfig, model=None):
    """Attention, norm, optional adapter and residual on ``h`` of shape ``(B_eff, S, D)``."""
    z, scores = msa_forward(block.msa_for(stage), h)
    if model is not None:
        z = model.dropout(z)
    norm = getattr(block, f"{stage}_norm")
    adapter = getattr(block, f"{stage}_adapter")
    if norm is None:
        raise ConfigError(f"{stage} stage is not built in this model")
    z = batchnorm_forward(norm, z)
    if ablation.adapter_enabled(stage):
        if adapter is None:
            raise ConfigError(f"{stage} adapter is not built in this model")
        z = adapter_forward(adapter, z)
    return z + h, scores


def channel_stage(block: Block, h, ablation: AblationConfig, model=None) -> tuple[Tensor, Optional[np.ndarray]]:
    """Attend across channels at every time step; identity when disabled."""
    h = T.as_tensor(h)
    if not ablation.channel_msa:
        return h, None
    b, n, l, d = h.shape
    hc = T.reshape(T.permute(h, (0, 2, 1, 3)), (b * l, n, d))
    out, scores = _residual_stage(block, CHANNEL, hc, ablation, model)
    out = T.permute(T.reshape(out, (b, l, n, d)), (0, 2, 1, 3))
    return out, scores


def sequence_stage(block: Block, h, ablation: AblationConfig, model=None) -> tuple[Tensor, Optional[np.ndarray]]:
    """Attend across time steps within every channel; identity when disabled."""
    h = T.as_tensor(h)
    if not ablation.sequence_msa:
        return h, None
    b, n, l, d = h.shape
    out, scores = _residual_stage(block, SEQUENCE, T.reshape(h, (b * n, l, d)), ablation, model)
    return T.reshape(out, (b, n, l, d)), scores


_STAGE_FN = {CHANNEL: channel_stage, SEQUENCE: sequence_stage}


def model_forward(m: CSformer, x, ablation: Optional[AblationConfig] = None):
    """Forecast ``(B, N, T)`` from ``(B, N, L)``.

    Returns the prediction and a dict mapping ``(block, stage)`` to that stage's
    score array of shape ``(B_eff, heads, S, S)``.
    """
    ablation = ablation or m.ablation
    if ablation.separate_msa != m.ablation.separate_msa:
        raise ConfigError("parameter sharing is structural; rebuild the model to change it")
    x = T.as_tensor(x)
    cfg = m.config
    if x.ndim != 3 or x.shape[1:] != (cfg.n_channels, cfg.lookback):
        raise ConfigError(f"expected input (B, {cfg.n_channels}, {cfg.lookback}), got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericsError("non-finite values in model input")

    stats = None
    if m.revin is not None:
        x, stats = revin_normalize(m.revin, x)
    h = embed_augment(m.nu, x)
    scores = {}
    for i, block in enumerate(m.blocks):
        for stage in ablation.stages:
            h, s = _STAGE_FN[stage](block, h, ablation, m)
            if not np.all(np.isfinite(h.data)):
                raise NumericsError(f"non-finite activations after block {i} {stage} stage")
            scores[(i, stage)] = s
    b, n, l, d = h.shape
    yhat = m.head(T.reshape(h, (b, n, l * d)))
    if stats is not None:
        yhat = revin_denormalize(m.revin, yhat, stats)
    return yhat, scores


def export_attention_scores(scores: dict) -> dict[tuple[int, str, int], np.ndarray]:
    """Average each stage's scores over the effective batch, one ``S x S`` map per head."""
    out = {}
    for (block, stage), s in sorted(scores.items()):
        if s is None:
            continue
        avg = s.mean(axis=0)
        for head in range(avg.shape[0]):
            out[(block, stage, head)] = avg[head]
    return out


def _stage_parameters(block: Block, stage: str, ablation: AblationConfig) -> list[Tensor]:
    params = list(block.msa_for(stage).parameters())
    norm = getattr(block, f"{stage}_norm")
    if norm is not None:
        params += norm.parameters()
    adapter = getattr(block, f"{stage}_adapter")
    if adapter is not None and ablation.adapter_enabled(stage):
        params += adapter.parameters()
    return params


def count_parameters(m: CSformer, ablation: Optional[AblationConfig] = None) -> int:
    """Number of learnable scalars active under ``ablation``; shared storage counts once."""
    ablation = ablation or m.ablation
    params = [m.nu] + m.head.parameters()
    if m.revin is not None:
        params += m.revin.parameters()
    for block in m.blocks:
        for stage in ablation.stages:
            params += _stage_parameters(block, stage, ablation)
    unique = {id(p): p for p in params}
    return sum(p.size for p in unique.values())


def msa_parameter_count(m: CSformer) -> int:
    return sum(p.size for p in m.blocks[0].msa.parameters())
