"""Feature swapping between aligned word/object rows, and the aligner that
fuses the overall text and image vectors into one representation."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import numerics as nm
from .errors import ConfigError, DataError
from .numerics import Tensor


class SwapStrategy(str, Enum):
    NONE = "none"
    IMAGE_TO_TEXT = "image_to_text"
    TEXT_TO_IMAGE = "text_to_image"
    BIDIRECTIONAL = "bidirectional"
    HYBRID = "hybrid"


# Hybrid draws uniformly, per instance, from the non-hybrid strategies.
_HYBRID_POOL = (
    SwapStrategy.NONE,
    SwapStrategy.IMAGE_TO_TEXT,
    SwapStrategy.TEXT_TO_IMAGE,
    SwapStrategy.BIDIRECTIONAL,
)


def parse_strategy(name: str) -> SwapStrategy:
    key = str(name).strip().lower().replace("_", "")
    for s in SwapStrategy:
        if s.value.replace("_", "") == key:
            return s
    raise ConfigError(
        f"unknown swap_strategy '{name}'; expected one of {[s.value for s in SwapStrategy]}"
    )


@dataclass
class SwappedPair:
    """Word/object matrices after the swap; shapes match the inputs."""

    h_w: Tensor
    h_v: Tensor


def swap_features(
    words: Tensor,
    objects: Tensor,
    pairs: list,
    strategy: SwapStrategy,
    rng: np.random.Generator | None = None,
) -> SwappedPair:
    """Exchange embeddings of aligned word/object rows.

    All replaced rows are sourced from the ORIGINAL matrices (simultaneous
    semantics), never from partially swapped ones. When several pairs share a
    destination row, the first pair in list order wins. Sides a strategy does
    not touch are returned as the identical input tensor.
    """
    if strategy is SwapStrategy.HYBRID:
        if rng is None:
            raise ConfigError("hybrid swap strategy needs an rng stream")
        strategy = _HYBRID_POOL[int(rng.integers(len(_HYBRID_POOL)))]

    n = words.data.shape[0]
    m = objects.data.shape[0]
    w2o: list[tuple[int, int]] = []
    o2w: list[tuple[int, int]] = []
    for p in pairs:
        i, j = p.word_position, p.object_index
        if not (0 <= i < n) or not (0 <= j < m):
            raise DataError(f"alignment pair ({i},{j}) out of range for n={n}, m={m}")
        w2o.append((i, j))
        o2w.append((j, i))

    h_w = words
    h_v = objects
    if strategy in (SwapStrategy.IMAGE_TO_TEXT, SwapStrategy.BIDIRECTIONAL):
        h_w = nm.replace_rows(words, objects, w2o)
    if strategy in (SwapStrategy.TEXT_TO_IMAGE, SwapStrategy.BIDIRECTIONAL):
        h_v = nm.replace_rows(objects, words, o2w)
    return SwappedPair(h_w=h_w, h_v=h_v)


def align(h_cls: Tensor, h_img: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused representation: tanh(W @ concat(h_CLS, h_IMG) + b)."""
    return nm.tanh(nm.linear(nm.concat_vec([h_cls, h_img]), w, b))
