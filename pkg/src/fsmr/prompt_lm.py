"""Prompt assembly and the small transformer language model that reads it.

The prompt interleaves learned phrase embeddings with embedded slots: one row
for the image vector, one for the alignment vector, the object rows, and the
word rows. A 2-layer pre-norm transformer encodes the sequence; the row at
position 0 is the classification summary."""

from __future__ import annotations

from dataclasses import dataclass

from . import numerics as nm
from .errors import CapacityError, ConfigError
from .numerics import Tensor

# Learned template-phrase lengths (leading phrase, alignment phrase, object phrase).
TEMPLATE_LENGTHS = (5, 4, 3)

LM_LAYERS = 2
LM_HEADS = 4
LM_FFN_MULT = 4

PROMPT_MODES = ("full", "no_template")

# slot_map labels
SLOT_CLS = "CLS"
SLOT_TEMPLATE = "TEMPLATE"
SLOT_IMG = "IMG_SLOT"
SLOT_ALIGN = "ALIGN_SLOT"
SLOT_OBJ = "OBJ"
SLOT_SEP = "SEP"
SLOT_WORD = "WORD"


@dataclass
class PromptSequence:
    rows: Tensor
    slot_map: list[str]


def assemble_prompt(
    h_img: Tensor,
    a: Tensor,
    h_v: Tensor,
    h_w: Tensor,
    mode: str,
    params: dict[str, Tensor],
    max_seq_length: int = 150,
) -> PromptSequence:
    """Build the prompt row matrix and its slot map.

    full: [CLS] phrase1 <h_IMG> phrase2 <A> phrase3 <h_v rows> [SEP] <h_w rows>.
    no_template drops the three phrase blocks and keeps everything else in the
    same relative order.
    """
    if mode not in PROMPT_MODES:
        raise ConfigError(f"prompt_mode must be one of {PROMPT_MODES}, got '{mode}'")
    t1, t2, t3 = TEMPLATE_LENGTHS
    m = h_v.data.shape[0]
    n = h_w.data.shape[0]

    parts: list[Tensor] = [nm.row(params["prompt_cls"], 0)]
    slots = [SLOT_CLS]
    tmpl = params["tmpl_emb"]
    if mode == "full":
        parts.append(nm.slice_rows(tmpl, 0, t1))
        slots += [SLOT_TEMPLATE] * t1
    parts.append(h_img)
    slots.append(SLOT_IMG)
    if mode == "full":
        parts.append(nm.slice_rows(tmpl, t1, t1 + t2))
        slots += [SLOT_TEMPLATE] * t2
    parts.append(a)
    slots.append(SLOT_ALIGN)
    if mode == "full":
        parts.append(nm.slice_rows(tmpl, t1 + t2, t1 + t2 + t3))
        slots += [SLOT_TEMPLATE] * t3
    parts.append(h_v)
    slots += [SLOT_OBJ] * m
    parts.append(nm.row(params["prompt_sep"], 0))
    slots.append(SLOT_SEP)
    parts.append(h_w)
    slots += [SLOT_WORD] * n

    length = len(slots)
    if length > max_seq_length:
        raise CapacityError(f"prompt length {length} exceeds max sequence length {max_seq_length}")
    return PromptSequence(rows=nm.concat_rows(parts), slot_map=slots)


def lm_forward(seq: PromptSequence, params: dict[str, Tensor]) -> Tensor:
    """Encode the prompt with the 2-layer transformer; return the row-0 summary."""
    length = seq.rows.data.shape[0]
    pos = params["lm_pos"]
    if length > pos.data.shape[0]:
        raise CapacityError(f"prompt length {length} exceeds position table of {pos.data.shape[0]}")
    x = nm.add(seq.rows, nm.slice_rows(pos, 0, length))
    for i in range(LM_LAYERS):
        p = f"lm{i}"
        normed = nm.layer_norm(x, params[f"{p}_ln1_g"], params[f"{p}_ln1_b"])
        att = nm.mha_block(
            normed, normed,
            params[f"{p}_wq"], params[f"{p}_wk"], params[f"{p}_wv"], params[f"{p}_wo"],
            heads=LM_HEADS,
        )
        x = nm.add(x, att)
        normed = nm.layer_norm(x, params[f"{p}_ln2_g"], params[f"{p}_ln2_b"])
        ff = nm.ffn_block(
            normed,
            params[f"{p}_ffn_w1"], params[f"{p}_ffn_b1"],
            params[f"{p}_ffn_w2"], params[f"{p}_ffn_b2"],
        )
        x = nm.add(x, ff)
    x = nm.layer_norm(x, params["lm_lnf_g"], params["lm_lnf_b"])
    return nm.row(x, 0)


def classify(s_cls: Tensor, w_cls: Tensor, b_cls: Tensor) -> Tensor:
    """Binary logits over {contradiction, entailment}: index 1 is entailment."""
    return nm.linear(s_cls, w_cls, b_cls)
