"""Training objectives: masked-prediction loss, family-smoothing loss, blend.

The masked loss is the mean negative log-likelihood over masked positions.
The family loss replaces each position's single gold term with the mean
negative log-likelihood over every member of the gold token's family, so a
singleton family contributes exactly its masked-loss term. The blended
objective is (1 - alpha) * masked + alpha * family, with alpha either
constant or warmed linearly from zero over the first fraction of steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .corpus import Vocabulary
from .glyphnet import GlyphNet


def mlm_loss(log_probs: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    """Mean NLL of the gold index per masked position."""
    if log_probs.shape[0] != gold.shape[0]:
        raise ValueError("log_probs and gold disagree on position count")
    if log_probs.shape[0] == 0:
        raise ValueError("no masked positions")
    return -log_probs[torch.arange(gold.shape[0]), gold].mean()


def gn_loss(
    log_probs: torch.Tensor,
    gold: torch.Tensor,
    family_indices: Sequence[Sequence[int]],
) -> torch.Tensor:
    """Mean over positions of the mean member NLL of the gold's family."""
    n = log_probs.shape[0]
    if len(family_indices) != n or gold.shape[0] != n:
        raise ValueError("family_indices and gold must align with positions")
    terms = []
    for i, members in enumerate(family_indices):
        if len(members) == 0:
            raise ValueError(f"empty family at position {i}")
        idx = torch.as_tensor(list(members), dtype=torch.long)
        terms.append(-log_probs[i, idx].mean())
    return torch.stack(terms).mean()


@dataclass(frozen=True)
class LossBreakdown:
    mlm: torch.Tensor
    gn: torch.Tensor
    alpha: float
    total: torch.Tensor


def combined_loss(
    log_probs: torch.Tensor,
    gold: torch.Tensor,
    family_indices: Sequence[Sequence[int]],
    alpha: float,
) -> LossBreakdown:
    """(1 - alpha) * masked + alpha * family; alpha = 0 returns masked exactly."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    mlm = mlm_loss(log_probs, gold)
    gn = gn_loss(log_probs, gold, family_indices)
    total = mlm if alpha == 0.0 else (1.0 - alpha) * mlm + alpha * gn
    return LossBreakdown(mlm=mlm, gn=gn, alpha=alpha, total=total)


def classification_loss(log_probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean NLL of the gold label."""
    if log_probs.shape[0] != labels.shape[0] or log_probs.shape[0] == 0:
        raise ValueError("labels must align with a non-empty batch")
    return -log_probs[torch.arange(labels.shape[0]), labels].mean()


def family_indices_for(
    golds: Sequence[str], net: GlyphNet, vocab: Vocabulary
) -> list[list[int]]:
    """Vocabulary indices of each gold form's family members.

    Members missing from the vocabulary are skipped; the gold itself must be
    present, so the list is never empty.
    """
    out: list[list[int]] = []
    for form in golds:
        members = net.family_of(form)
        idx = sorted(vocab.index[m] for m in members if m in vocab.index)
        out.append(idx)
    return out


@dataclass(frozen=True)
class AlphaSchedule:
    kind: str = "linear_warm"
    alpha_max: float = 0.3
    warm_frac: float = 0.2

    def __post_init__(self):
        if self.kind not in ("constant", "linear_warm"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 <= self.alpha_max <= 1.0:
            raise ValueError("alpha_max must be in [0, 1]")
        if not 0.0 <= self.warm_frac <= 1.0:
            raise ValueError("warm_frac must be in [0, 1]")


def alpha_at(sched: AlphaSchedule, step: int, total_steps: int) -> float:
    """Blend weight at a zero-based step of a run with total_steps steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if sched.kind == "constant":
        return sched.alpha_max
    warm_steps = sched.warm_frac * total_steps
    if warm_steps <= 0.0:
        return sched.alpha_max
    return sched.alpha_max * min(1.0, step / warm_steps)
