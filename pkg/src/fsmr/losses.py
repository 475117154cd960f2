"""Training objectives: binary image-text matching loss, 2-way cross-entropy,
and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, NumericError
from .numerics import Tensor


@dataclass
class LossWeights:
    alpha: float = 1.0  # cross-entropy weight
    beta: float = 1.0  # image-text matching weight

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"loss weights must be non-negative, got ({self.alpha}, {self.beta})")
        if self.alpha + self.beta <= 0:
            raise ConfigError("at least one of loss_alpha / loss_beta must be positive")


def itm_loss(p_itm: Tensor, y: int) -> Tensor:
    """Binary cross-entropy of the match probability against label y in {0,1}."""
    p = float(p_itm.data)
    if not 0.0 < p < 1.0:
        raise NumericError(f"itm_loss needs a probability strictly inside (0,1), got {p}")
    if y == 1:
        return -nm.log(p_itm)
    return -nm.log(1.0 - p_itm)


def ce_loss(logits: Tensor, y: int) -> Tensor:
    """Softmax cross-entropy over the 2-way logits, via log-sum-exp."""
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("ce_loss requires finite logits")
    return nm.logsumexp(logits) - nm.pick(logits, y)


def total_loss(ce: Tensor | None, itm: Tensor | None, w: LossWeights) -> Tensor:
    """alpha*ce + beta*itm. Zero-weight terms are skipped so each single-loss
    configuration reduces to the other loss bit-for-bit."""
    terms: list[Tensor] = []
    if w.alpha > 0:
        if ce is None:
            raise NumericError("total_loss: alpha > 0 but no cross-entropy term given")
        terms.append(ce if w.alpha == 1.0 else nm.scale(ce, w.alpha))
    if w.beta > 0:
        if itm is None:
            raise NumericError("total_loss: beta > 0 but no matching term given")
        terms.append(itm if w.beta == 1.0 else nm.scale(itm, w.beta))
    if len(terms) == 1:
        return terms[0]
    return nm.add(terms[0], terms[1])
