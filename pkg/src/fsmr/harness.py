"""End-to-end pipeline: parameter construction, the per-candidate forward,
training with RMSprop and best-validation selection, evaluation with
per-category selection distributions, and the ablation/strategy sweeps."""

from __future__ import annotations

import dataclasses
import json
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from . import prompt_lm, xattn
from .encoder import CATEGORIES, Instance, encode
from .errors import ConfigError, DataError, NumericError
from .fusion import SwapStrategy, align, parse_strategy, swap_features
from .losses import LossWeights, ce_loss, itm_loss, total_loss
from .numerics import RmspropState, Tensor, TrainHyper, named_stream, uniform_init
from .synth_data import read_jsonl

ABLATION_ARMS: tuple[tuple[str, str | None], ...] = (
    ("full", None),
    ("-Feature Swapping", "disable_swap"),
    ("-Prompt Template", "disable_prompt_template"),
    ("-Multi-head Attention", "disable_xattn"),
    ("-ITM loss", "disable_itm"),
    ("-CE loss", "disable_ce"),
)

SWAP_SWEEP = ("image_to_text", "text_to_image", "bidirectional", "hybrid")
ATTN_SWEEP = ("visual_only", "language_only", "mixed")


@dataclass
class RunConfig:
    seed: int = 0
    hidden_size: int = 32
    visual_dim: int = 16
    vocab_size: int = 256
    max_seq_length: int = 150
    learning_rate: float = 1e-3
    weight_decay: float = 8e-5
    epsilon: float = 5e-5
    rms_decay: float = 0.99
    epochs: int = 30
    batch_size: int = 8
    swap_strategy: str = "bidirectional"
    prompt_mode: str = "full"
    attn_heads: int = 4
    attn_dropout: float = 0.2
    attn_pooling: str = "mean"
    attn_strategy: str = "mixed"
    loss_alpha: float = 1.0
    loss_beta: float = 1.0
    disable_swap: bool = False
    disable_prompt_template: bool = False
    disable_xattn: bool = False
    disable_itm: bool = False
    disable_ce: bool = False
    zero_object_features: bool = False
    stop_at_perfect_val: bool = True
    train_data: str | None = None
    val_data: str | None = None
    test_data: str | None = None

    def __post_init__(self):
        if self.hidden_size < 1 or self.vocab_size < 1 or self.max_seq_length < 1:
            raise ConfigError("hidden_size, vocab_size and max_seq_length must be positive")
        if self.hidden_size % prompt_lm.LM_HEADS != 0:
            raise ConfigError(
                f"hidden_size ({self.hidden_size}) must be divisible by the LM head count "
                f"({prompt_lm.LM_HEADS})"
            )
        if self.hidden_size % self.attn_heads != 0:
            raise ConfigError(
                f"attn_heads ({self.attn_heads}) must divide hidden_size ({self.hidden_size})"
            )
        if self.prompt_mode not in prompt_lm.PROMPT_MODES:
            raise ConfigError(f"prompt_mode must be one of {prompt_lm.PROMPT_MODES}, got '{self.prompt_mode}'")
        self.swap_strategy = parse_strategy(self.swap_strategy).value
        self.attention_config()  # validates heads/dropout/pooling/strategy
        self.hyper()  # validates the optimizer regimen
        self.loss_weights()  # validates that one training signal remains

    # -- derived views -----------------------------------------------------

    def hyper(self) -> TrainHyper:
        return TrainHyper(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            epsilon=self.epsilon,
            rms_decay=self.rms_decay,
            epochs=self.epochs,
            batch_size=self.batch_size,
        )

    def attention_config(self) -> xattn.AttentionConfig:
        return xattn.AttentionConfig(
            heads=self.attn_heads,
            dropout_rate=self.attn_dropout,
            pooling=self.attn_pooling,
            strategy=self.attn_strategy,
        )

    def loss_weights(self) -> LossWeights:
        if self.disable_itm and self.disable_ce:
            raise ConfigError("disable_itm and disable_ce cannot both be set; no training signal remains")
        return LossWeights(
            alpha=0.0 if self.disable_ce else self.loss_alpha,
            beta=0.0 if self.disable_itm else self.loss_beta,
        )

    @property
    def effective_swap(self) -> SwapStrategy:
        if self.disable_swap:
            return SwapStrategy.NONE
        return SwapStrategy(self.swap_strategy)

    @property
    def effective_prompt_mode(self) -> str:
        return "no_template" if self.disable_prompt_template else self.prompt_mode

    @property
    def itm_input_dim(self) -> int:
        # Without the attention module the ITM head reads the pooled
        # concatenation of both modalities, which is always 2d.
        if self.disable_xattn or self.attn_strategy == "mixed":
            return 2 * self.hidden_size
        return self.hidden_size

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key '{key}'")
        return cls(**raw)


@dataclass
class Metrics:
    """Selection accuracy plus where the selections landed, per category."""

    accuracy: float
    dist: dict[str, float]
    loss_curve: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        body = {"accuracy": self.accuracy, "dist": self.dist, "loss_curve": self.loss_curve}
        return json.dumps(body, sort_keys=True)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


# Attention query/key projections start 3x wider than the base uniform init.
# At the default learning rate the plain init keeps attention logits too flat
# to break out of the base-rate plateau within the training budget; the wider
# start sharpens attention early and the cross-modal matching then trains.
_QK_INIT_GAIN = 3.0


def _param_specs(cfg: RunConfig) -> list[tuple[str, tuple[int, ...], int, float]]:
    d = cfg.hidden_size
    dv = cfg.visual_dim
    v = cfg.vocab_size
    ms = cfg.max_seq_length
    t_total = sum(prompt_lm.TEMPLATE_LENGTHS)
    ffw = prompt_lm.LM_FFN_MULT * d
    specs: list[tuple[str, tuple[int, ...], int, float]] = [
        ("tok_emb", (v, d), d, 1.0),
        ("tok_pos", (ms, d), d, 1.0),
        ("obj_proj_w", (dv, d), dv, 1.0),
        ("obj_proj_b", (d,), dv, 1.0),
        ("obj_entity_emb", (v, d), d, 1.0),
        ("enc_cls_w", (d, d), d, 1.0),
        ("enc_cls_b", (d,), d, 1.0),
        ("enc_img_w", (d, d), d, 1.0),
        ("enc_img_b", (d,), d, 1.0),
        ("align_w", (2 * d, d), 2 * d, 1.0),
        ("align_b", (d,), 2 * d, 1.0),
        ("prompt_cls", (1, d), d, 1.0),
        ("prompt_sep", (1, d), d, 1.0),
        ("tmpl_emb", (t_total, d), d, 1.0),
        ("lm_pos", (ms, d), d, 1.0),
        ("cls_w", (d, 2), d, 1.0),
        ("cls_b", (2,), d, 1.0),
        ("itm_w", (cfg.itm_input_dim,), cfg.itm_input_dim, 1.0),
        ("itm_b", (), cfg.itm_input_dim, 1.0),
    ]
    for prefix in ("enc_txt", "enc_obj", "xa_lang", "xa_vis"):
        for tail in ("wq", "wk", "wv", "wo"):
            gain = _QK_INIT_GAIN if tail in ("wq", "wk") else 1.0
            specs.append((f"{prefix}_{tail}", (d, d), d, gain))
    for i in range(prompt_lm.LM_LAYERS):
        p = f"lm{i}"
        specs += [
            (f"{p}_wq", (d, d), d, _QK_INIT_GAIN),
            (f"{p}_wk", (d, d), d, _QK_INIT_GAIN),
            (f"{p}_wv", (d, d), d, 1.0),
            (f"{p}_wo", (d, d), d, 1.0),
            (f"{p}_ffn_w1", (d, ffw), d, 1.0),
            (f"{p}_ffn_b1", (ffw,), d, 1.0),
            (f"{p}_ffn_w2", (ffw, d), ffw, 1.0),
            (f"{p}_ffn_b2", (d,), ffw, 1.0),
        ]
    return specs


def _layer_norm_names() -> list[str]:
    names = []
    for i in range(prompt_lm.LM_LAYERS):
        names += [f"lm{i}_ln1", f"lm{i}_ln2"]
    names.append("lm_lnf")
    return names


def init_params(cfg: RunConfig) -> dict[str, Tensor]:
    """Fresh parameter registry; every tensor drawn from its own named stream.

    Weights and embeddings are uniform in +-1/sqrt(fan_in) (query/key
    projections carry the extra gain above); layer-norm gains start at 1 and
    offsets at 0 (normalization must begin as the identity).
    """
    params: dict[str, Tensor] = {}
    for name, shape, fan_in, gain in _param_specs(cfg):
        rng = named_stream(cfg.seed, f"init/{name}")
        data = uniform_init(rng, shape, fan_in)
        if gain != 1.0:
            data = data * gain
        params[name] = nm.parameter(data)
    d = cfg.hidden_size
    for ln in _layer_norm_names():
        params[f"{ln}_g"] = nm.parameter(np.ones(d))
        params[f"{ln}_b"] = nm.parameter(np.zeros(d))
    return params


@contextmanager
def frozen(params: dict[str, Tensor]):
    """Temporarily switch off gradient tracking (evaluation-mode forwards)."""
    for p in params.values():
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params.values():
            p.requires_grad = True


# ---------------------------------------------------------------------------
# forward pipeline
# ---------------------------------------------------------------------------


def forward_candidate(
    instance: Instance,
    candidate_index: int,
    params: dict[str, Tensor],
    cfg: RunConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    swap_override: SwapStrategy | None = None,
) -> tuple[Tensor, Tensor]:
    """Run the full pipeline for one candidate; returns (logits, p_ITM).

    Eval mode disables dropout and freezes the hybrid swap to bidirectional.
    ``swap_override`` lets the trainer pin the per-instance hybrid draw.
    """
    training = mode == "train"
    enc = encode(
        instance,
        candidate_index,
        params,
        max_seq_length=cfg.max_seq_length,
        zero_object_features=cfg.zero_object_features,
    )

    strategy = swap_override if swap_override is not None else cfg.effective_swap
    if strategy is SwapStrategy.HYBRID and not training:
        strategy = SwapStrategy.BIDIRECTIONAL
    swapped = swap_features(
        enc.words, enc.objects, instance.alignments[candidate_index], strategy, rng=rng
    )

    a_vec = align(enc.h_cls, enc.h_img, params["align_w"], params["align_b"])
    seq = prompt_lm.assemble_prompt(
        enc.h_img, a_vec, swapped.h_v, swapped.h_w,
        cfg.effective_prompt_mode, params, cfg.max_seq_length,
    )
    s_cls = prompt_lm.lm_forward(seq, params)
    logits = prompt_lm.classify(s_cls, params["cls_w"], params["cls_b"])

    if cfg.disable_xattn:
        s_attn = nm.concat_vec(
            [nm.mean_over_rows(swapped.h_w), nm.mean_over_rows(swapped.h_v)]
        )
    else:
        acfg = cfg.attention_config()
        o_w, o_v = xattn.cross_attention(
            swapped.h_w, swapped.h_v, acfg, params, rng=rng, training=training
        )
        p_w = xattn.pool(o_w, acfg.pooling) if o_w is not None else None
        p_v = xattn.pool(o_v, acfg.pooling) if o_v is not None else None
        s_attn = xattn.fuse(p_w, p_v, acfg.strategy)
    p_itm = xattn.itm_head(s_attn, params["itm_w"], params["itm_b"])
    return logits, p_itm


def _score_candidate(logits: Tensor, p_itm: Tensor, use_ce: bool) -> float:
    if use_ce:
        z = logits.data
        e = np.exp(z - z.max())
        return float(e[1] / e.sum())
    return float(p_itm.data)


def select_answer(instance: Instance, params: dict[str, Tensor], cfg: RunConfig) -> int:
    """Pick the candidate with the best score; ties go to the lowest index."""
    use_ce = cfg.loss_weights().alpha > 0
    scores = []
    for ci in range(4):
        logits, p_itm = forward_candidate(instance, ci, params, cfg, mode="eval")
        scores.append(_score_candidate(logits, p_itm, use_ce))
    return int(np.argmax(scores))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def compute_metrics(selections: list[int], dataset: list[Instance], loss_curve=None) -> Metrics:
    if len(selections) != len(dataset) or not dataset:
        raise DataError("selection list and dataset sizes differ or are empty")
    counts = dict.fromkeys(CATEGORIES, 0)
    hits = 0
    for sel, inst in zip(selections, dataset):
        counts[inst.categories[sel]] += 1
        hits += sel == inst.answer_index
    n = len(dataset)
    dist = {c: counts[c] / n for c in CATEGORIES}
    return Metrics(accuracy=hits / n, dist=dist, loss_curve=list(loss_curve or []))


def evaluate(params: dict[str, Tensor], cfg: RunConfig, dataset: list[Instance]) -> Metrics:
    if not dataset:
        raise DataError("cannot evaluate on an empty dataset")
    check_compat(cfg, dataset)
    with frozen(params):
        selections = [select_answer(inst, params, cfg) for inst in dataset]
    return compute_metrics(selections, dataset)


def check_compat(cfg: RunConfig, dataset: list[Instance]) -> None:
    """Model dims must cover the dataset; mismatches name both sides."""
    for inst in dataset:
        for tok in inst.premise_tokens:
            if tok >= cfg.vocab_size:
                raise ConfigError(
                    f"dataset token id {tok} (instance {inst.id}) >= model vocab_size {cfg.vocab_size}"
                )
        for cand in inst.candidates:
            for tok in cand:
                if tok >= cfg.vocab_size:
                    raise ConfigError(
                        f"dataset token id {tok} (instance {inst.id}) >= model vocab_size {cfg.vocab_size}"
                    )
        for obj in inst.objects:
            if obj.feature.shape[0] != cfg.visual_dim:
                raise ConfigError(
                    f"dataset feature dim {obj.feature.shape[0]} (instance {inst.id}) "
                    f"!= model visual_dim {cfg.visual_dim}"
                )
            if obj.entity_id >= cfg.vocab_size:
                raise ConfigError(
                    f"dataset entity id {obj.entity_id} (instance {inst.id}) >= model vocab_size {cfg.vocab_size}"
                )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def _hybrid_plan(cfg: RunConfig, epoch: int, n_instances: int) -> list[SwapStrategy] | None:
    """Per-instance hybrid draws, fixed for the whole epoch."""
    if cfg.effective_swap is not SwapStrategy.HYBRID:
        return None
    rng = named_stream(cfg.seed, f"hybrid-epoch-{epoch}")
    pool = (
        SwapStrategy.NONE,
        SwapStrategy.IMAGE_TO_TEXT,
        SwapStrategy.TEXT_TO_IMAGE,
        SwapStrategy.BIDIRECTIONAL,
    )
    return [pool[int(k)] for k in rng.integers(len(pool), size=n_instances)]


def train(
    cfg: RunConfig,
    train_set: list[Instance] | None = None,
    val_set: list[Instance] | None = None,
) -> tuple[dict[str, Tensor], Metrics]:
    """Train on candidate-level batches; keep the best-validation parameters.

    Returns the retained parameters and Metrics holding the best validation
    accuracy/distribution plus the per-epoch mean training loss curve. Ties on
    validation accuracy keep the earlier epoch, which also means training may
    stop once validation is perfect (no later epoch could be retained).
    """
    if train_set is None:
        if not cfg.train_data:
            raise ConfigError("train requires train_data")
        train_set = read_jsonl(cfg.train_data)
    if val_set is None:
        if not cfg.val_data:
            raise ConfigError("train requires val_data")
        val_set = read_jsonl(cfg.val_data)
    if not train_set or not val_set:
        raise DataError("training and validation sets must be non-empty")
    check_compat(cfg, train_set)
    check_compat(cfg, val_set)

    params = init_params(cfg)
    hyper = cfg.hyper()
    weights = cfg.loss_weights()
    pairs = [(ii, ci) for ii in range(len(train_set)) for ci in range(4)]
    steps_per_epoch = math.ceil(len(pairs) / hyper.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    state = RmspropState(params, total_steps=total_steps if total_steps else None)
    shuffle_rng = named_stream(cfg.seed, "train-shuffle")
    forward_rng = named_stream(cfg.seed, "train-forward")

    best = _snapshot(params)
    best_acc = -1.0
    best_dist = dict.fromkeys(CATEGORIES, 0.0)
    loss_curve: list[float] = []

    for epoch in range(cfg.epochs):
        plan = _hybrid_plan(cfg, epoch, len(train_set))
        order = shuffle_rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            nm.zero_grads(params)
            batch_losses = []
            for flat in batch:
                ii, ci = pairs[flat]
                inst = train_set[ii]
                y = 1 if ci == inst.answer_index else 0
                override = plan[ii] if plan is not None else None
                logits, p_itm = forward_candidate(
                    inst, ci, params, cfg, mode="train", rng=forward_rng, swap_override=override
                )
                ce = ce_loss(logits, y) if weights.alpha > 0 else None
                itm = itm_loss(p_itm, y) if weights.beta > 0 else None
                batch_losses.append(total_loss(ce, itm, weights))
            batch_loss = nm.scale(nm.add_n(batch_losses), 1.0 / len(batch_losses))
            if not np.isfinite(batch_loss.data):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            nm.backward(batch_loss)
            grads = {name: p.grad for name, p in params.items() if p.grad is not None}
            nm.rmsprop_step(params, grads, state, hyper)
            epoch_loss += float(batch_loss.data) * len(batch_losses)
        loss_curve.append(epoch_loss / len(pairs))

        val_metrics = evaluate(params, cfg, val_set)
        if val_metrics.accuracy > best_acc:
            best_acc = val_metrics.accuracy
            best_dist = val_metrics.dist
            best = _snapshot(params)
        if cfg.stop_at_perfect_val and best_acc >= 1.0:
            break

    if best_acc < 0:  # epochs == 0
        val_metrics = evaluate(params, cfg, val_set)
        best_acc, best_dist = val_metrics.accuracy, val_metrics.dist

    final = {name: nm.parameter(data) for name, data in best.items()}
    return final, Metrics(accuracy=best_acc, dist=best_dist, loss_curve=loss_curve)


# ---------------------------------------------------------------------------
# experiment matrices
# ---------------------------------------------------------------------------


def _run_arm(
    cfg: RunConfig,
    train_set: list[Instance],
    val_set: list[Instance],
    test_set: list[Instance],
) -> tuple[float, float]:
    params, metrics = train(cfg, train_set, val_set)
    test_metrics = evaluate(params, cfg, test_set)
    return metrics.accuracy, test_metrics.accuracy


def ablate(
    cfg: RunConfig,
    train_set: list[Instance],
    val_set: list[Instance],
    test_set: list[Instance],
) -> list[dict]:
    """Six runs sharing the seed, each toggling exactly one component off."""
    rows = []
    for arm, flag in ABLATION_ARMS:
        arm_cfg = cfg if flag is None else dataclasses.replace(cfg, **{flag: True})
        val_acc, test_acc = _run_arm(arm_cfg, train_set, val_set, test_set)
        rows.append({"arm": arm, "validation": val_acc, "testing": test_acc})
    return rows


def sweep_swap(cfg, train_set, val_set, test_set) -> list[dict]:
    rows = []
    for strat in SWAP_SWEEP:
        arm_cfg = dataclasses.replace(cfg, swap_strategy=strat, disable_swap=False)
        val_acc, test_acc = _run_arm(arm_cfg, train_set, val_set, test_set)
        rows.append({"strategy": strat, "validation": val_acc, "testing": test_acc})
    return rows


def sweep_attn(cfg, train_set, val_set, test_set) -> list[dict]:
    rows = []
    for strat in ATTN_SWEEP:
        arm_cfg = dataclasses.replace(cfg, attn_strategy=strat, disable_xattn=False)
        val_acc, test_acc = _run_arm(arm_cfg, train_set, val_set, test_set)
        rows.append({"strategy": strat, "validation": val_acc, "testing": test_acc})
    return rows
