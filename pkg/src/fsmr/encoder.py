"""Toy trainable bimodal encoder. Produces the (h_CLS, words, objects, h_IMG)
bundle downstream modules consume: learned token+position embeddings and a
projected object stream, each mixed by one residual self-attention layer, with
the overall text/image vectors taken as projected means."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .errors import CapacityError, DataError
from .numerics import Tensor

CATEGORIES = ("AT", "D1", "AF", "D2")


@dataclass
class ObjectRegion:
    """One detected image object: a stable entity id plus its feature vector."""

    entity_id: int
    feature: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if not np.all(np.isfinite(self.feature)):
            raise DataError(f"object entity {self.entity_id} has a non-finite feature")


@dataclass
class AlignmentPair:
    """word position (into premise++hypothesis tokens) <-> object index."""

    word_position: int
    object_index: int


@dataclass
class Instance:
    id: str
    premise_tokens: list[int]
    candidates: list[list[int]]
    objects: list[ObjectRegion]
    alignments: list[list[AlignmentPair]] = field(default_factory=list)
    answer_index: int = 0
    categories: list[str] = field(default_factory=list)

    def validate(self, max_seq_length: int | None = None) -> None:
        if len(self.candidates) != 4:
            raise DataError(f"instance {self.id}: expected 4 candidates, got {len(self.candidates)}")
        if len(self.categories) != 4 or any(c not in CATEGORIES for c in self.categories):
            raise DataError(f"instance {self.id}: categories must be 4 of {CATEGORIES}")
        if self.categories.count("AT") != 1:
            raise DataError(f"instance {self.id}: exactly one candidate must be AT")
        if not (0 <= self.answer_index < 4) or self.categories[self.answer_index] != "AT":
            raise DataError(f"instance {self.id}: answer_index must point at the AT candidate")
        if not self.objects:
            raise DataError(f"instance {self.id} has no objects")
        if len(self.alignments) != 4:
            raise DataError(f"instance {self.id}: expected 4 alignment lists")
        m = len(self.objects)
        l1 = len(self.premise_tokens)
        for ci, (cand, pairs) in enumerate(zip(self.candidates, self.alignments)):
            n = l1 + len(cand)
            if max_seq_length is not None and n > max_seq_length:
                raise CapacityError(f"instance {self.id}: sequence length {n} exceeds cap {max_seq_length}")
            seen = set()
            for p in pairs:
                if not (0 <= p.word_position < n) or not (0 <= p.object_index < m):
                    raise DataError(
                        f"instance {self.id} candidate {ci}: alignment ({p.word_position},"
                        f"{p.object_index}) out of range for n={n}, m={m}"
                    )
                if p.word_position in seen:
                    raise DataError(
                        f"instance {self.id} candidate {ci}: duplicate word position {p.word_position}"
                    )
                seen.add(p.word_position)


@dataclass
class ModalEmbeddings:
    """Encoder output bundle for one (instance, candidate) pair."""

    h_cls: Tensor
    words: Tensor
    objects: Tensor
    h_img: Tensor


def embed_tokens(tokens: list[int], table: Tensor, positions: Tensor) -> Tensor:
    """Token embeddings plus learned positional embeddings, one row per token."""
    vocab = table.data.shape[0]
    for t in tokens:
        if not (0 <= t < vocab):
            raise DataError(f"token id {t} outside vocabulary of size {vocab}")
    if len(tokens) > positions.data.shape[0]:
        raise CapacityError(
            f"sequence length {len(tokens)} exceeds position table of {positions.data.shape[0]}"
        )
    return nm.embedding_with_pos(table, positions, tokens)


def project_objects(objects: list[ObjectRegion], params: dict[str, Tensor]) -> Tensor:
    """Map raw object features into the shared hidden space.

    Each feature goes through linear + tanh; the entity-id embedding is added
    so object identity survives the projection. Row order follows the input.
    """
    if not objects:
        raise DataError("instance has no objects")
    feats = nm.tensor(np.stack([o.feature for o in objects]))
    proj = nm.tanh(nm.linear(feats, params["obj_proj_w"], params["obj_proj_b"]))
    ids = [o.entity_id for o in objects]
    ent_table = params["obj_entity_emb"]
    vocab = ent_table.data.shape[0]
    for i in ids:
        if not (0 <= i < vocab):
            raise DataError(f"entity id {i} outside vocabulary of size {vocab}")
    return nm.add(proj, nm.embedding(ent_table, ids))


def _self_mix(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """One residual self-attention layer (single head): x + MHA(x, x)."""
    att = nm.mha_block(
        x, x,
        params[f"{prefix}_wq"], params[f"{prefix}_wk"],
        params[f"{prefix}_wv"], params[f"{prefix}_wo"],
        heads=1,
    )
    return nm.add(x, att)


def encode(
    instance: Instance,
    candidate_index: int,
    params: dict[str, Tensor],
    max_seq_length: int = 150,
    zero_object_features: bool = False,
) -> ModalEmbeddings:
    """Run the toy encoder for one candidate of one instance."""
    if not (0 <= candidate_index < len(instance.candidates)):
        raise DataError(f"candidate index {candidate_index} invalid for instance {instance.id}")
    tokens = list(instance.premise_tokens) + list(instance.candidates[candidate_index])
    if len(tokens) > max_seq_length:
        raise CapacityError(f"sequence length {len(tokens)} exceeds cap {max_seq_length}")

    words0 = embed_tokens(tokens, params["tok_emb"], params["tok_pos"])
    words = _self_mix(words0, params, "enc_txt")

    objects = instance.objects
    if zero_object_features:
        objects = [ObjectRegion(o.entity_id, np.zeros_like(o.feature)) for o in objects]
    objs0 = project_objects(objects, params)
    objs = _self_mix(objs0, params, "enc_obj")

    h_cls = nm.linear(nm.mean_over_rows(words), params["enc_cls_w"], params["enc_cls_b"])
    h_img = nm.linear(nm.mean_over_rows(objs), params["enc_img_w"], params["enc_img_b"])
    return ModalEmbeddings(h_cls=h_cls, words=words, objects=objs, h_img=h_img)
