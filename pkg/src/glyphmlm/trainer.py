"""Adaptation schedules for the encoder.

Two masked-prediction stages are supported: a broad-corpus pass over
auxiliary material ("dapt") with the lower half of the network frozen, and
an in-domain pass over the target corpus ("tapt") with everything
trainable. Family-aware loss blending and glyph-biased mask sampling apply
only to the in-domain stage; the broad-corpus stage always uses plain
masked prediction with uniform sampling. A separate routine fine-tunes the
dynasty/period heads on labeled inscriptions.

Every random choice is keyed on (seed, purpose, ...) so a run is a pure
function of its configuration and inputs.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch

from .corpus import (
    DYNASTIES,
    PERIODS,
    BOS_IDX,
    EOS_IDX,
    Corpus,
    CorpusFormatError,
    DataError,
    Inscription,
    Token,
    Vocabulary,
)
from .encoder import (
    EncoderConfig,
    EncoderModel,
    TrainContext,
    backward,
    forward_classify,
    forward_mlm,
    freeze_layers,
    init_model,
    init_optimizer,
    optimizer_step,
    pad_batch,
)
from .fileio import dump_jsonl, read_lines, write_atomic
from .glyphnet import GlyphNet
from .masking import MaskConfig, masked_input, sample_mask_plan, stride_candidates
from .objectives import (
    AlphaSchedule,
    alpha_at,
    classification_loss,
    combined_loss,
    family_indices_for,
    mlm_loss,
)
from .seeding import rng_for

SCHEDULES = ("baseline", "dapt_only", "tapt_only", "tapt_from_dapt")


class NumericError(RuntimeError):
    """A loss or parameter became non-finite during optimization."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Complete description of one training run."""

    schedule: str = "tapt_from_dapt"
    use_gn_loss: bool = False
    use_bias_sampling: bool = False
    bias_lambda: float = 2.0
    stride: int = 10
    mlm_prob: float = 0.2
    batch_size: int = 32
    lr: float = 1.2e-4
    weight_decay: float = 0.01
    dapt_epochs: int = 10
    tapt_epochs: int = 40
    dapt_freeze_layers: Optional[int] = None
    lambda_dapt: float = 0.0
    alpha_kind: str = "linear_warm"
    alpha_max: float = 0.3
    alpha_warm_frac: float = 0.2
    dim: int = 128
    layers: int = 4
    heads: int = 4
    ff_dim: int = 512
    max_seq: int = 128
    attn_dropout: float = 0.1
    hidden_dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; pick one of {SCHEDULES}")
        if not 0.0 <= self.lambda_dapt <= 1.0:
            raise ValueError("lambda_dapt must be in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.dapt_epochs < 0 or self.tapt_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.dapt_freeze_layers is not None and not (
            0 <= self.dapt_freeze_layers <= self.layers
        ):
            raise ValueError("dapt_freeze_layers out of range")
        # Delegate range checks to the component configs.
        self.mask_config("tapt")
        self.alpha_schedule()
        if self.dim < 1 or self.layers < 1 or self.heads < 1 or self.dim % self.heads:
            raise ValueError("dim must be a positive multiple of heads; layers >= 1")

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            dim=self.dim,
            layers=self.layers,
            heads=self.heads,
            ff_dim=self.ff_dim,
            max_seq=self.max_seq,
            attn_dropout=self.attn_dropout,
            hidden_dropout=self.hidden_dropout,
        )

    def mask_config(self, stage: str) -> MaskConfig:
        """Biased sampling is an in-domain-stage feature only."""
        if stage == "tapt":
            return MaskConfig(
                stride=self.stride,
                mlm_prob=self.mlm_prob,
                bias_lambda=self.bias_lambda,
                use_bias=self.use_bias_sampling,
            )
        return MaskConfig(
            stride=self.stride, mlm_prob=self.mlm_prob, bias_lambda=1.0, use_bias=False
        )

    def alpha_schedule(self) -> AlphaSchedule:
        return AlphaSchedule(
            kind=self.alpha_kind, alpha_max=self.alpha_max, warm_frac=self.alpha_warm_frac
        )

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"run config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise CorpusFormatError("run config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise CorpusFormatError(f"run config has unknown fields: {', '.join(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class FineTuneConfig:
    """Dating fine-tune settings; "head" mode trains only the label heads."""

    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 32
    weight_decay: float = 0.01
    mode: str = "head"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("head", "full"):
            raise ValueError(f"mode must be 'head' or 'full', got {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs and batch_size must be >= 1 and lr positive")


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainOutcome:
    model: EncoderModel
    records: list[dict]
    stage_meta: dict


def _encode_tokens(vocab: Vocabulary, tokens: Sequence[Token]) -> list[int]:
    return [BOS_IDX] + [vocab.encode_token(t) for t in tokens] + [EOS_IDX]


def _prepare_items(
    corpus: Corpus, vocab: Vocabulary, max_seq: int, stride: int
) -> list[tuple[str, tuple[Token, ...], list[int]]]:
    """Sequences with at least one maskable cell, pre-encoded and clipped
    to the model window (boundary markers included in the budget)."""
    items = []
    for ins in corpus.inscriptions:
        tokens = ins.tokens[: max_seq - 2]
        if not stride_candidates(tokens, stride):
            continue
        items.append((ins.id, tokens, _encode_tokens(vocab, tokens)))
    return items


def _check_finite(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise NumericError(f"{what} became non-finite at step {step}")


def _mlm_stage(
    model: EncoderModel,
    stage: str,
    corpus: Corpus,
    config: RunConfig,
    vocab: Vocabulary,
    net: GlyphNet,
    records: list[dict],
    global_step: int,
    mix_corpus: Optional[Corpus] = None,
) -> int:
    epochs = config.dapt_epochs if stage == "dapt" else config.tapt_epochs
    if epochs == 0:
        return global_step
    items = _prepare_items(corpus, vocab, config.max_seq, config.stride)
    if not items:
        raise DataError(f"no trainable sequences for the {stage} stage")
    mask_cfg = config.mask_config(stage)
    use_gn = config.use_gn_loss and stage == "tapt"
    lam_mix = config.lambda_dapt if stage == "tapt" else 0.0
    mix_items: list = []
    if lam_mix > 0.0:
        if mix_corpus is None:
            raise DataError("lambda_dapt > 0 needs an auxiliary corpus")
        mix_items = _prepare_items(mix_corpus, vocab, config.max_seq, config.stride)
        if not mix_items:
            raise DataError("auxiliary corpus has no trainable sequences to mix in")
    mix_cfg = config.mask_config("dapt")

    n_batches = math.ceil(len(items) / config.batch_size)
    total_steps = epochs * n_batches
    sched = config.alpha_schedule()
    params = dict(model.named_parameters())
    opt = init_optimizer(params)
    stage_step = 0
    mix_ptr = 0
    mix_order: list[int] = []

    for epoch in range(epochs):
        order = rng_for(config.seed, "shuffle", stage, epoch).permutation(len(items))
        if mix_items:
            mix_order = list(
                rng_for(config.seed, "shuffle", "tapt_mix", epoch).permutation(len(mix_items))
            )
            mix_ptr = 0
        for b in range(n_batches):
            rows = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = [items[i] for i in rows]
            plans = [
                sample_mask_plan(tokens, sid, config.seed, mask_cfg, net, stage, epoch)
                for sid, tokens, _ in batch
            ]
            seqs = [masked_input(enc, plan) for (_, _, enc), plan in zip(batch, plans)]
            ids, key_mask = pad_batch(seqs)
            positions = [
                (row, pos + 1)
                for row, plan in enumerate(plans)
                for pos in plan.positions
            ]
            gold_forms = [form for plan in plans for form in plan.golds]
            gold_ids = torch.tensor([vocab.index[f] for f in gold_forms], dtype=torch.long)
            ctx = TrainContext(seed=config.seed, step=global_step)
            log_probs = forward_mlm(model, ids, key_mask, positions, ctx)

            if use_gn:
                alpha = alpha_at(sched, stage_step, total_steps)
                fams = family_indices_for(gold_forms, net, vocab)
                parts = combined_loss(log_probs, gold_ids, fams, alpha)
                mlm_val, gn_val, total = parts.mlm, parts.gn, parts.total
            else:
                alpha = 0.0
                mlm_val = mlm_loss(log_probs, gold_ids)
                gn_val = None
                total = mlm_val

            record = {
                "step": global_step,
                "stage": stage,
                "epoch": epoch,
                "mlm": float(mlm_val.item()),
                "gn": None if gn_val is None else float(gn_val.item()),
                "alpha": alpha,
                "total": float(total.item()),
                "n_masked": len(positions),
            }

            if lam_mix > 0.0:
                take = [
                    mix_items[mix_order[(mix_ptr + j) % len(mix_order)]]
                    for j in range(min(config.batch_size, len(mix_items)))
                ]
                mix_ptr = (mix_ptr + len(take)) % len(mix_order)
                mix_plans = [
                    sample_mask_plan(tokens, sid, config.seed, mix_cfg, net, "tapt_mix", epoch)
                    for sid, tokens, _ in take
                ]
                mix_seqs = [
                    masked_input(enc, plan) for (_, _, enc), plan in zip(take, mix_plans)
                ]
                mix_ids, mix_mask = pad_batch(mix_seqs)
                mix_positions = [
                    (row, pos + 1)
                    for row, plan in enumerate(mix_plans)
                    for pos in plan.positions
                ]
                mix_gold = torch.tensor(
                    [vocab.index[f] for plan in mix_plans for f in plan.golds],
                    dtype=torch.long,
                )
                mix_lp = forward_mlm(model, mix_ids, mix_mask, mix_positions, ctx)
                mix_mlm = mlm_loss(mix_lp, mix_gold)
                total = (1.0 - lam_mix) * total + lam_mix * mix_mlm
                record["dapt_mlm"] = float(mix_mlm.item())
                record["total"] = float(total.item())

            _check_finite(record["total"], "training loss", global_step)
            grads = backward(model, total)
            optimizer_step(
                params, grads, opt, lr=config.lr, weight_decay=config.weight_decay
            )
            records.append(record)
            global_step += 1
            stage_step += 1
    return global_step


def run(
    config: RunConfig,
    corpus: Corpus,
    net: GlyphNet,
    vocab: Vocabulary,
    dapt_corpus: Optional[Corpus] = None,
) -> TrainOutcome:
    """Execute the configured schedule from a fresh seeded model.

    The target corpus feeds the in-domain stage; the auxiliary corpus feeds
    the broad-corpus stage and, when ``lambda_dapt`` > 0, gets blended into
    the in-domain loss batch by batch.
    """
    model = init_model(config.encoder_config(vocab.size), config.seed)
    records: list[dict] = []
    stages: list[dict] = []
    wants_dapt = config.schedule in ("dapt_only", "tapt_from_dapt")
    wants_tapt = config.schedule in ("tapt_only", "tapt_from_dapt")
    if wants_dapt and dapt_corpus is None:
        raise DataError(f"schedule {config.schedule!r} needs an auxiliary corpus")
    global_step = 0
    if wants_dapt:
        k = (
            config.dapt_freeze_layers
            if config.dapt_freeze_layers is not None
            else config.layers // 2
        )
        frozen = freeze_layers(model, k)
        start = global_step
        global_step = _mlm_stage(
            model, "dapt", dapt_corpus, config, vocab, net, records, global_step
        )
        stages.append(
            {
                "stage": "dapt",
                "epochs": config.dapt_epochs,
                "steps": global_step - start,
                "frozen_params": len(frozen),
                "freeze_layers": k,
            }
        )
    if wants_tapt:
        freeze_layers(model, 0)
        start = global_step
        global_step = _mlm_stage(
            model,
            "tapt",
            corpus,
            config,
            vocab,
            net,
            records,
            global_step,
            mix_corpus=dapt_corpus,
        )
        stages.append(
            {"stage": "tapt", "epochs": config.tapt_epochs, "steps": global_step - start}
        )
    stage_meta = {
        "schedule": config.schedule,
        "seed": config.seed,
        "steps": global_step,
        "stages": stages,
        "run_config": dataclasses.asdict(config),
    }
    return TrainOutcome(model=model, records=records, stage_meta=stage_meta)


# ---------------------------------------------------------------------------
# dating fine-tune


def fine_tune_dating(
    model: EncoderModel,
    vocab: Vocabulary,
    corpus: Corpus,
    config: FineTuneConfig,
) -> tuple[EncoderModel, list[dict]]:
    """Train the dynasty/period heads on labeled inscriptions.

    Returns a tuned copy; the input model is left untouched. Rows without a
    dynasty label are skipped entirely; rows without a period label skip
    only the period term.
    """
    labeled = [ins for ins in corpus.inscriptions if ins.dynasty is not None]
    if not labeled:
        raise DataError("no dynasty-labeled inscriptions to fine-tune on")
    tuned = copy.deepcopy(model)
    if config.mode == "head":
        for name, p in tuned.named_parameters():
            p.requires_grad_(name.startswith(("dynasty_head", "period_head")))
    else:
        freeze_layers(tuned, 0)

    dyn_index = {d: i for i, d in enumerate(DYNASTIES)}
    per_index = {p: i for i, p in enumerate(PERIODS)}
    max_seq = tuned.config.max_seq
    encoded = [
        (ins, _encode_tokens(vocab, ins.tokens[: max_seq - 2])) for ins in labeled
    ]
    params = dict(tuned.named_parameters())
    opt = init_optimizer(params)
    records: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng_for(config.seed, "finetune_shuffle", epoch).permutation(len(encoded))
        for b in range(math.ceil(len(encoded) / config.batch_size)):
            rows = order[b * config.batch_size : (b + 1) * config.batch_size]
            chunk = [encoded[i] for i in rows]
            ids, key_mask = pad_batch([seq for _, seq in chunk])
            ctx = TrainContext(seed=config.seed, step=step)
            dyn_labels = torch.tensor(
                [dyn_index[ins.dynasty] for ins, _ in chunk], dtype=torch.long
            )
            dyn_lp = forward_classify(tuned, ids, key_mask, "dynasty", ctx)
            loss = classification_loss(dyn_lp, dyn_labels)
            per_rows = [i for i, (ins, _) in enumerate(chunk) if ins.period is not None]
            if per_rows:
                per_labels = torch.tensor(
                    [per_index[chunk[i][0].period] for i in per_rows], dtype=torch.long
                )
                per_lp = forward_classify(tuned, ids, key_mask, "period", ctx)
                loss = loss + classification_loss(per_lp[per_rows], per_labels)
            _check_finite(float(loss.item()), "fine-tune loss", step)
            grads = backward(tuned, loss)
            optimizer_step(
                params, grads, opt, lr=config.lr, weight_decay=config.weight_decay
            )
            records.append(
                {"step": step, "epoch": epoch, "loss": float(loss.item()), "n": len(chunk)}
            )
            step += 1
    return tuned, records


# ---------------------------------------------------------------------------
# train log serialization


def write_train_log(records: Sequence[dict], path) -> None:
    write_atomic(path, dump_jsonl(records))


def parse_train_log(path) -> list[dict]:
    return [json.loads(line) for line in read_lines(path)]
