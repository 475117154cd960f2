"""Synthetic bimodal multiple-choice data whose per-category structure is
provable by construction.

Each instance carries one textual fact (an entity pair plus a relation,
spelled out in the premise) and one visual fact (an entity's attribute,
present only in the object features). The four candidates realize the four
truth combinations: AT states both facts, D1 breaks the visual fact, AF breaks
the textual fact, D2 breaks both. Because the premise never mentions
attributes and the image never encodes relations, single-modality classifiers
provably top out at 0.5 while a bimodal one can reach 1.0.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .encoder import AlignmentPair, Instance, ObjectRegion
from .errors import ConfigError, DataError
from .numerics import named_stream


@dataclass
class GenConfig:
    num_instances: int = 1000
    min_entities: int = 2
    max_entities: int = 4
    num_entity_ids: int = 20
    num_relations: int = 6
    num_attributes: int = 6
    visual_dim: int = 16
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_relations < 2:
            raise ConfigError(f"num_relations must be >= 2 (a contradiction must exist), got {self.num_relations}")
        if self.num_attributes < 2:
            raise ConfigError(f"num_attributes must be >= 2 (a contradiction must exist), got {self.num_attributes}")
        if self.min_entities < 2 or self.max_entities < self.min_entities:
            raise ConfigError(f"entity range [{self.min_entities}, {self.max_entities}] invalid; need >= 2")
        if self.num_entity_ids < self.max_entities:
            raise ConfigError("num_entity_ids must be >= max_entities (entities are sampled without replacement)")
        if self.num_attributes > self.visual_dim:
            raise ConfigError(
                f"num_attributes ({self.num_attributes}) must fit the one-hot feature of width {self.visual_dim}"
            )

    # token layout: [entities][relations][attributes]
    def relation_token(self, r: int) -> int:
        return self.num_entity_ids + r

    def attribute_token(self, a: int) -> int:
        return self.num_entity_ids + self.num_relations + a

    @property
    def vocab_size(self) -> int:
        return self.num_entity_ids + self.num_relations + self.num_attributes


def _other_than(rng: np.random.Generator, count: int, taken: int) -> int:
    pick = int(rng.integers(count - 1))
    return pick + 1 if pick >= taken else pick


def generate(cfg: GenConfig) -> list[Instance]:
    """Deterministically generate ``cfg.num_instances`` instances."""
    rng = named_stream(cfg.seed, "synth-data")
    out: list[Instance] = []
    for idx in range(cfg.num_instances):
        k = int(rng.integers(cfg.min_entities, cfg.max_entities + 1))
        entities = [int(e) for e in rng.choice(cfg.num_entity_ids, size=k, replace=False)]
        e1, e2 = entities[0], entities[1]
        rel = int(rng.integers(cfg.num_relations))
        ev_pos = int(rng.integers(k))
        e_v = entities[ev_pos]
        attr_true = int(rng.integers(cfg.num_attributes))

        # every entity's object carries an attribute; only e_v's is asserted
        attrs = [int(rng.integers(cfg.num_attributes)) for _ in entities]
        attrs[ev_pos] = attr_true

        objects = []
        for eid, a in zip(entities, attrs):
            feat = np.zeros(cfg.visual_dim)
            feat[a] = 1.0
            if cfg.noise_sigma > 0:
                feat = feat + cfg.noise_sigma * rng.standard_normal(cfg.visual_dim)
            objects.append(ObjectRegion(entity_id=eid, feature=feat))

        premise = [e1, cfg.relation_token(rel), e2]

        def candidate(r: int, a: int) -> list[int]:
            return [e1, cfg.relation_token(r), e2, e_v, cfg.attribute_token(a)]

        rel_af = _other_than(rng, cfg.num_relations, rel)
        rel_d2 = _other_than(rng, cfg.num_relations, rel)
        attr_d1 = _other_than(rng, cfg.num_attributes, attr_true)
        attr_d2 = _other_than(rng, cfg.num_attributes, attr_true)
        by_category = {
            "AT": candidate(rel, attr_true),
            "D1": candidate(rel, attr_d1),
            "AF": candidate(rel_af, attr_true),
            "D2": candidate(rel_d2, attr_d2),
        }

        order = [("AT", "D1", "AF", "D2")[i] for i in rng.permutation(4)]
        candidates = [by_category[c] for c in order]
        answer = order.index("AT")

        l1 = len(premise)
        obj_index = {eid: i for i, eid in enumerate(entities)}
        pairs = [
            AlignmentPair(0, obj_index[e1]),
            AlignmentPair(2, obj_index[e2]),
            AlignmentPair(l1 + 0, obj_index[e1]),
            AlignmentPair(l1 + 2, obj_index[e2]),
            AlignmentPair(l1 + 3, obj_index[e_v]),
        ]
        alignments = [list(pairs) for _ in range(4)]

        inst = Instance(
            id=f"synth-{cfg.seed}-{idx:06d}",
            premise_tokens=premise,
            candidates=candidates,
            objects=objects,
            alignments=alignments,
            answer_index=answer,
            categories=list(order),
        )
        out.append(inst)
    return out


# ---------------------------------------------------------------------------
# JSON-lines persistence
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("id", "premise", "candidates", "objects", "alignments", "answer", "categories")


def _instance_to_record(inst: Instance) -> dict:
    return {
        "id": inst.id,
        "premise": list(inst.premise_tokens),
        "candidates": [list(c) for c in inst.candidates],
        "objects": [{"entity": o.entity_id, "feat": [float(x) for x in o.feature]} for o in inst.objects],
        "alignments": [[[p.word_position, p.object_index] for p in pairs] for pairs in inst.alignments],
        "answer": inst.answer_index,
        "categories": list(inst.categories),
    }


def _record_to_instance(rec: dict, line_no: int) -> Instance:
    for field_name in _REQUIRED_FIELDS:
        if field_name not in rec:
            raise DataError(f"line {line_no}: record missing field '{field_name}'")
    try:
        objects = [
            ObjectRegion(entity_id=int(o["entity"]), feature=np.asarray(o["feat"], dtype=np.float64))
            for o in rec["objects"]
        ]
        alignments = [
            [AlignmentPair(int(i), int(j)) for i, j in pairs] for pairs in rec["alignments"]
        ]
        inst = Instance(
            id=str(rec["id"]),
            premise_tokens=[int(t) for t in rec["premise"]],
            candidates=[[int(t) for t in c] for c in rec["candidates"]],
            objects=objects,
            alignments=alignments,
            answer_index=int(rec["answer"]),
            categories=[str(c) for c in rec["categories"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"line {line_no}: malformed record field: {exc}") from exc
    inst.validate()
    return inst


def write_jsonl(dataset: list[Instance], path: str) -> None:
    """Write one JSON record per line; the write is atomic (temp + rename)."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for inst in dataset:
            fh.write(json.dumps(_instance_to_record(inst), ensure_ascii=False))
            fh.write("\n")
    os.replace(tmp, path)


def read_jsonl(path: str) -> list[Instance]:
    out: list[Instance] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: not valid JSON: {exc}") from exc
            out.append(_record_to_instance(rec, line_no))
    return out


# ---------------------------------------------------------------------------
# construction-provable ceilings
# ---------------------------------------------------------------------------

_TEXT_CONSISTENT = {"AT", "D1"}
_IMAGE_CONSISTENT = {"AT", "AF"}


def _consistent_sets(inst: Instance) -> tuple[list[int], list[int], list[int]]:
    if len(inst.categories) != 4 or any(c not in ("AT", "D1", "AF", "D2") for c in inst.categories):
        raise DataError(f"instance {inst.id}: no category tags; ceilings need data generated here")
    text = [i for i, c in enumerate(inst.categories) if c in _TEXT_CONSISTENT]
    image = [i for i, c in enumerate(inst.categories) if c in _IMAGE_CONSISTENT]
    full = [i for i, c in enumerate(inst.categories) if c == "AT"]
    return text, image, full


def oracle_select(inst: Instance) -> int:
    """Index of the candidate consistent with both stored facts."""
    return _consistent_sets(inst)[2][0]


def oracle_ceilings(dataset: list[Instance]) -> dict[str, float]:
    """Best-achievable selection accuracy per modality restriction.

    A restricted classifier can rank consistent candidates above inconsistent
    ones but cannot split within the consistent set; expected accuracy under
    uniform tie-breaking is the mean of 1/|consistent set|.
    """
    if not dataset:
        raise DataError("oracle_ceilings needs a non-empty dataset")
    text_acc = 0.0
    image_acc = 0.0
    full_acc = 0.0
    for inst in dataset:
        text, image, full = _consistent_sets(inst)
        at = inst.answer_index
        text_acc += (at in text) / len(text)
        image_acc += (at in image) / len(image)
        full_acc += (at in full) / len(full)
    n = len(dataset)
    return {"text_only": text_acc / n, "image_only": image_acc / n, "full": full_acc / n}
