"""Stride-based mask candidate selection and glyph-biased sampling.

Candidates are every stride-th raw position starting at the first
non-boundary token, with Unreadable and Undeciphered cells excluded after
the stride is applied (positions are not shifted to fill gaps). From the
candidate set, m = max(1, round(mlm_prob * |C|)) positions are drawn
without replacement; under biasing each glyph-token candidate carries
weight lambda and every other candidate weight 1. lambda = 1 follows the
exact code path of uniform sampling, so both modes agree bit for bit under
a shared seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import MASK_IDX, Token, TokenKind
from .glyphnet import GlyphNet
from .seeding import rng_for


@dataclass(frozen=True)
class MaskConfig:
    stride: int = 10
    mlm_prob: float = 0.2
    bias_lambda: float = 1.0
    use_bias: bool = False

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not 0.0 < self.mlm_prob <= 1.0:
            raise ValueError("mlm_prob must be in (0, 1]")
        if self.bias_lambda <= 0.0:
            raise ValueError("bias_lambda must be positive")


@dataclass(frozen=True)
class MaskPlan:
    seq_id: str
    positions: tuple[int, ...]  # sorted raw token indices
    golds: tuple[str, ...]  # identifiable forms aligned with positions


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stride_candidates(tokens: Sequence[Token], stride: int) -> tuple[int, ...]:
    """Identifiable positions at raw indices 0, stride, 2*stride, ..."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return tuple(
        i
        for i in range(0, len(tokens), stride)
        if tokens[i].kind is TokenKind.IDENTIFIABLE
    )


def glyph_bias_weights(
    tokens: Sequence[Token],
    candidates: Sequence[int],
    net: GlyphNet,
    lam: float,
) -> np.ndarray:
    """Per-candidate sampling weights: lambda for glyph tokens, else 1."""
    return np.array(
        [lam if net.is_glyph_token(tokens[i].form) else 1.0 for i in candidates],
        dtype=np.float64,
    )


def draw_without_replacement(
    rng: np.random.Generator, weights: np.ndarray, m: int
) -> list[int]:
    """Sequential weighted draws; each step renormalizes over the remainder.

    The first draw follows p(i) = w_i / sum(w) exactly. One uniform variate
    is consumed per draw regardless of the weight values.
    """
    n = len(weights)
    if not 0 < m <= n:
        raise ValueError(f"cannot draw {m} of {n} items without replacement")
    remaining = list(range(n))
    live = np.asarray(weights, dtype=np.float64).copy()
    out: list[int] = []
    for _ in range(m):
        cum = np.cumsum(live[remaining])
        u = rng.random() * cum[-1]
        k = int(np.searchsorted(cum, u, side="right"))
        k = min(k, len(remaining) - 1)  # guard the u == total edge
        out.append(remaining.pop(k))
    return out


def sample_mask_plan(
    tokens: Sequence[Token],
    seq_id: str,
    seed: int,
    config: MaskConfig,
    net: GlyphNet,
    stage: str = "tapt",
    epoch: int = 0,
) -> Optional[MaskPlan]:
    """Deterministic plan for one sequence, or None when nothing is maskable."""
    candidates = stride_candidates(tokens, config.stride)
    if not candidates:
        return None
    m = max(1, round_half_up(config.mlm_prob * len(candidates)))
    lam = config.bias_lambda if config.use_bias else 1.0
    weights = glyph_bias_weights(tokens, candidates, net, lam)
    rng = rng_for(seed, "mask", stage, epoch, seq_id)
    drawn = draw_without_replacement(rng, weights, m)
    positions = tuple(sorted(candidates[k] for k in drawn))
    return MaskPlan(
        seq_id=seq_id,
        positions=positions,
        golds=tuple(tokens[i].form for i in positions),
    )


def masked_input(encoded: Sequence[int], plan: MaskPlan) -> list[int]:
    """Copy of an encoded sequence with plan positions replaced by the mask.

    Encoded sequences carry a leading boundary token, so raw position i
    lives at encoded index i + 1.
    """
    out = list(encoded)
    for pos in plan.positions:
        out[pos + 1] = MASK_IDX
    return out
