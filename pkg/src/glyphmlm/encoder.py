"""Small trainable transformer encoder with explicit training plumbing.

Architecture (fully determined by EncoderConfig, so checkpoints are
self-describing): token + learned position embeddings, a stack of post-norm
blocks (multi-head self-attention, GELU feed-forward, residuals, per-block
LayerNorms), a token-prediction head over the vocabulary, and two linear
classification heads (dynasty, period) pooled on the first boundary token.

All stochastic behavior is explicit: dropout draws come from per-call
generators keyed by (seed, step, layer, site), so a forward pass is a pure
function of (parameters, inputs, ctx). Optimization is a hand-written Adam
step with decoupled weight decay over an explicit gradient dict; parameters
with requires_grad False are never touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import DataError, PAD_IDX
from .seeding import derive_seed

_NEG_INF = -1e9  # additive key-mask fill; exp underflows to exactly 0


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 128
    layers: int = 4
    heads: int = 4
    ff_dim: int = 512
    max_seq: int = 128
    attn_dropout: float = 0.1
    hidden_dropout: float = 0.1
    n_dynasties: int = 4
    n_periods: int = 3

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if min(self.vocab_size, self.dim, self.layers, self.heads, self.ff_dim, self.max_seq) < 1:
            raise ValueError("all size fields must be >= 1")


class TrainContext(NamedTuple):
    """Marks a training forward; keys the dropout draws. None means eval."""

    seed: int
    step: int


def _dropout(x: torch.Tensor, p: float, ctx: Optional[TrainContext], layer: int, site: int):
    if ctx is None or p <= 0.0:
        return x
    g = torch.Generator()
    g.manual_seed(derive_seed(ctx.seed, "dropout", ctx.step, layer, site))
    keep = (torch.rand(x.shape, generator=g, dtype=torch.float64) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


class _Block(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.heads = cfg.heads
        self.attn_q = nn.Linear(cfg.dim, cfg.dim)
        self.attn_k = nn.Linear(cfg.dim, cfg.dim)
        self.attn_v = nn.Linear(cfg.dim, cfg.dim)
        self.attn_o = nn.Linear(cfg.dim, cfg.dim)
        self.ln1 = nn.LayerNorm(cfg.dim)
        self.ff1 = nn.Linear(cfg.dim, cfg.ff_dim)
        self.ff2 = nn.Linear(cfg.ff_dim, cfg.dim)
        self.ln2 = nn.LayerNorm(cfg.dim)
        self.attn_dropout = cfg.attn_dropout
        self.hidden_dropout = cfg.hidden_dropout

    def forward(self, x, key_mask, ctx: Optional[TrainContext], layer_idx: int):
        B, T, D = x.shape
        hd = D // self.heads

        def split(t):
            return t.view(B, T, self.heads, hd).transpose(1, 2)

        q, k, v = split(self.attn_q(x)), split(self.attn_k(x)), split(self.attn_v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        # Mask keys only; padded queries keep finite rows so no NaNs can leak
        # into gradients of real positions.
        scores = scores.masked_fill(~key_mask[:, None, None, :], _NEG_INF)
        attn = torch.softmax(scores, dim=-1)
        attn = _dropout(attn, self.attn_dropout, ctx, layer_idx, site=1)
        mixed = (attn @ v).transpose(1, 2).reshape(B, T, D)
        a = _dropout(self.attn_o(mixed), self.hidden_dropout, ctx, layer_idx, site=2)
        x = self.ln1(x + a)
        f = _dropout(self.ff2(F.gelu(self.ff1(x))), self.hidden_dropout, ctx, layer_idx, site=3)
        return self.ln2(x + f)


class EncoderModel(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.config = cfg
        self.token_emb = nn.Embedding(cfg.vocab_size, cfg.dim)
        self.pos_emb = nn.Embedding(cfg.max_seq, cfg.dim)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.layers))
        self.mlm_head = nn.Linear(cfg.dim, cfg.vocab_size)
        self.dynasty_head = nn.Linear(cfg.dim, cfg.n_dynasties)
        self.period_head = nn.Linear(cfg.dim, cfg.n_periods)


def init_model(cfg: EncoderConfig, seed: int, dtype: torch.dtype = torch.float32) -> EncoderModel:
    """Deterministic init: N(0, 0.02) weights, zero biases, unit LayerNorm."""
    model = EncoderModel(cfg)
    g = torch.Generator()
    g.manual_seed(derive_seed(seed, "init"))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith(".bias") or ".ln" in name and name.endswith(".weight"):
                if ".ln" in name and name.endswith(".weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()
            else:
                p.normal_(mean=0.0, std=0.02, generator=g)
    return model.to(dtype)


def count_params(model: EncoderModel) -> int:
    return sum(p.numel() for p in model.parameters())


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad with the pad index; mask marks real positions."""
    if not seqs:
        raise ValueError("empty batch")
    T = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), T), PAD_IDX, dtype=torch.long)
    mask = torch.zeros((len(seqs), T), dtype=torch.bool)
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = torch.tensor(s, dtype=torch.long)
        mask[b, : len(s)] = True
    return ids, mask


def forward_hidden(
    model: EncoderModel,
    ids: torch.Tensor,
    key_mask: torch.Tensor,
    ctx: Optional[TrainContext] = None,
) -> torch.Tensor:
    cfg = model.config
    B, T = ids.shape
    if T > cfg.max_seq:
        raise DataError(f"sequence length {T} exceeds model maximum {cfg.max_seq}")
    pos = torch.arange(T, device=ids.device)
    x = model.token_emb(ids) + model.pos_emb(pos)[None, :, :]
    x = _dropout(x, cfg.hidden_dropout, ctx, layer=-1, site=0)
    for li, block in enumerate(model.blocks):
        x = block(x, key_mask, ctx, li)
    return x


def forward_mlm(
    model: EncoderModel,
    ids: torch.Tensor,
    key_mask: torch.Tensor,
    positions: Sequence[tuple[int, int]],
    ctx: Optional[TrainContext] = None,
) -> torch.Tensor:
    """Log-probabilities over the vocabulary at the given (batch, time) cells."""
    hidden = forward_hidden(model, ids, key_mask, ctx)
    rows = torch.tensor([p[0] for p in positions], dtype=torch.long)
    cols = torch.tensor([p[1] for p in positions], dtype=torch.long)
    logits = model.mlm_head(hidden[rows, cols])
    return F.log_softmax(logits, dim=-1)


def forward_classify(
    model: EncoderModel,
    ids: torch.Tensor,
    key_mask: torch.Tensor,
    head: str,
    ctx: Optional[TrainContext] = None,
) -> torch.Tensor:
    """Label log-probabilities pooled on the first boundary token."""
    hidden = forward_hidden(model, ids, key_mask, ctx)
    pooled = hidden[:, 0]
    if head == "dynasty":
        logits = model.dynasty_head(pooled)
    elif head == "period":
        logits = model.period_head(pooled)
    else:
        raise ValueError(f"unknown head {head!r}")
    return F.log_softmax(logits, dim=-1)


# ---------------------------------------------------------------------------
# freezing


def freeze_layers(model: EncoderModel, k: int) -> tuple[str, ...]:
    """Freeze embeddings plus the bottom k blocks; k = 0 leaves all trainable.

    Always resets every parameter to trainable first, so calling with 0
    unfreezes a previously frozen model.
    """
    if k < 0 or k > model.config.layers:
        raise ValueError(f"freeze depth {k} out of range for {model.config.layers} layers")
    for p in model.parameters():
        p.requires_grad_(True)
    if k == 0:
        return ()
    frozen: list[str] = []
    for name, p in model.named_parameters():
        if name.startswith(("token_emb", "pos_emb")) or any(
            name.startswith(f"blocks.{i}.") for i in range(k)
        ):
            p.requires_grad_(False)
            frozen.append(name)
    return tuple(sorted(frozen))


# ---------------------------------------------------------------------------
# gradients and optimization


def backward(model: EncoderModel, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Gradient dict for all named parameters; frozen entries are zeros."""
    model.zero_grad(set_to_none=True)
    loss.backward()
    grads: dict[str, torch.Tensor] = {}
    for name, p in model.named_parameters():
        grads[name] = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
    return grads


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


def init_optimizer(params: dict[str, torch.Tensor]) -> OptimizerState:
    return OptimizerState(
        step=0,
        m={n: torch.zeros_like(p) for n, p in params.items()},
        v={n: torch.zeros_like(p) for n, p in params.items()},
    )


def optimizer_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: OptimizerState,
    lr: float,
    weight_decay: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Adam with decoupled weight decay; frozen parameters are skipped."""
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    with torch.no_grad():
        for name, p in params.items():
            if not p.requires_grad:
                continue
            g = grads[name]
            m = state.m[name].mul_(b1).add_(g, alpha=1.0 - b1)
            v = state.v[name].mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / bc2).sqrt_().add_(eps)
            update = (m / bc1) / denom + weight_decay * p
            p.add_(update, alpha=-lr)
