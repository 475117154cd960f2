"""Cross-modal multi-head attention: each modality queries the other, the two
outputs are pooled and fused, and a sigmoid head turns the fusion into an
image-text match probability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, NumericError
from .numerics import Tensor

STRATEGIES = ("visual_only", "language_only", "mixed")
POOLINGS = ("mean", "max")


@dataclass
class AttentionConfig:
    heads: int = 4
    dropout_rate: float = 0.2
    pooling: str = "mean"
    strategy: str = "mixed"

    def __post_init__(self):
        if self.heads < 1:
            raise ConfigError(f"attn_heads must be >= 1, got {self.heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"attn_dropout must lie in [0,1), got {self.dropout_rate}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"attn_pooling must be one of {POOLINGS}, got '{self.pooling}'")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"attn_strategy must be one of {STRATEGIES}, got '{self.strategy}'")

    @property
    def language_branch(self) -> bool:
        return self.strategy in ("language_only", "mixed")

    @property
    def visual_branch(self) -> bool:
        return self.strategy in ("visual_only", "mixed")


@dataclass
class AttnOutput:
    """Branch outputs (absent branches are None) and the fused vector."""

    o_w: Tensor | None
    o_v: Tensor | None
    s_attn: Tensor


def cross_attention(
    h_w: Tensor,
    h_v: Tensor,
    cfg: AttentionConfig,
    params: dict[str, Tensor],
    rng: np.random.Generator | None = None,
    training: bool = False,
    probs_sink: dict | None = None,
) -> tuple[Tensor | None, Tensor | None]:
    """Compute the configured attention branches.

    Language branch: queries from words, keys/values from objects. Visual
    branch: queries from objects, keys/values from words. ``probs_sink``, if
    provided, receives the per-branch pre-dropout attention probabilities under
    keys 'language' and 'visual'.
    """
    d = h_w.data.shape[1]
    if d % cfg.heads != 0:
        raise ConfigError(f"attn_heads ({cfg.heads}) must divide the hidden size ({d})")

    def branch(xq, xkv, prefix, key):
        sink = [] if probs_sink is not None else None
        out = nm.mha_block(
            xq, xkv,
            params[f"{prefix}_wq"], params[f"{prefix}_wk"],
            params[f"{prefix}_wv"], params[f"{prefix}_wo"],
            heads=cfg.heads,
            dropout_rate=cfg.dropout_rate,
            rng=rng,
            training=training,
            probs_sink=sink,
        )
        if probs_sink is not None:
            probs_sink[key] = sink[0]
        return out

    o_w = branch(h_w, h_v, "xa_lang", "language") if cfg.language_branch else None
    o_v = branch(h_v, h_w, "xa_vis", "visual") if cfg.visual_branch else None
    return o_w, o_v


def pool(o: Tensor, pooling: str) -> Tensor:
    """Column-wise mean or max over the attended rows."""
    if pooling == "mean":
        return nm.mean_over_rows(o)
    if pooling == "max":
        return nm.max_over_rows(o)
    raise ConfigError(f"unknown pooling '{pooling}'")


def fuse(p_w: Tensor | None, p_v: Tensor | None, strategy: str) -> Tensor:
    """Concatenate the pooled branches (mixed) or pass the single branch through."""
    if strategy == "mixed":
        if p_w is None or p_v is None:
            raise NumericError("mixed attention strategy requires both pooled branches")
        return nm.concat_vec([p_w, p_v])
    if strategy == "language_only":
        if p_w is None:
            raise NumericError("language_only strategy requires the language branch")
        return p_w
    if strategy == "visual_only":
        if p_v is None:
            raise NumericError("visual_only strategy requires the visual branch")
        return p_v
    raise ConfigError(f"unknown attn_strategy '{strategy}'")


def itm_head(s_attn: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Match probability: sigmoid(w . s_attn + b), a scalar in (0,1)."""
    if w.data.shape != s_attn.data.shape:
        raise ConfigError(
            f"ITM head weight shape {w.data.shape} does not match fused vector "
            f"{s_attn.data.shape}; was the attention strategy changed without re-shaping the head?"
        )
    return nm.sigmoid(nm.add(nm.dot(s_attn, w), b))
