"""Restoration decoding over damaged inscriptions.

A query is a token sequence plus the set of positions to restore; by
default those are the Unreadable cells, with Undeciphered cells joining
only on request. Three modes share one scoring path:

- parallel: one forward pass, independent ranked candidates per position;
- step: candidates for the still-open positions, conditioned on an
  accepted {position: form} map (pure, drives the interactive session API);
- greedy: repeatedly commit the single most confident top-1 prediction
  (ties fall to the smallest position), re-scoring the rest; commitments
  are never revised.

Scores are log-probabilities over the full vocabulary (always <= 0);
candidate lists contain identifiable forms only, annotated with family ids.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import torch

from .corpus import (
    MASK_IDX,
    BOS_IDX,
    EOS_IDX,
    DataError,
    Token,
    TokenKind,
    Vocabulary,
    parse_text,
)
from .encoder import EncoderModel, forward_mlm, pad_batch
from .evaluation import _rank_forms
from .glyphnet import GlyphNet


@dataclass(frozen=True)
class RestorationQuery:
    tokens: tuple[Token, ...]
    mask_positions: tuple[int, ...]
    k: int = 10

    def __post_init__(self):
        if not self.mask_positions:
            raise DataError("query has no positions to restore")
        if list(self.mask_positions) != sorted(set(self.mask_positions)):
            raise DataError("mask positions must be sorted and unique")
        if self.mask_positions[0] < 0 or self.mask_positions[-1] >= len(self.tokens):
            raise DataError("mask position out of range")
        if self.k < 1:
            raise DataError("k must be >= 1")


@dataclass(frozen=True)
class Candidate:
    form: str
    score: float
    family_id: Optional[int]


@dataclass(frozen=True)
class CandidateSet:
    position: int
    entries: tuple[Candidate, ...]


def query_from_text(text: str, k: int = 10, include_undeciphered: bool = False) -> RestorationQuery:
    """Build a query whose mask set is the damaged cells of the text."""
    tokens = parse_text(text)
    masks = [
        i
        for i, t in enumerate(tokens)
        if t.kind is TokenKind.UNREADABLE
        or (include_undeciphered and t.kind is TokenKind.UNDECIPHERED)
    ]
    if not masks:
        raise DataError("text has no positions to restore")
    return RestorationQuery(tokens=tokens, mask_positions=tuple(masks), k=k)


def _encode_query(
    vocab: Vocabulary,
    query: RestorationQuery,
    accepted: dict[int, str],
    max_seq: int,
) -> tuple[list[int], list[int]]:
    """Encoded ids plus the still-open mask positions (raw indices)."""
    mask_set = set(query.mask_positions)
    for pos, form in accepted.items():
        if pos not in mask_set:
            raise DataError(f"position {pos} is not a maskable position of this query")
        if form not in vocab.index or not vocab.is_form_index(vocab.index[form]):
            raise DataError(f"accepted form {form!r} is not in the vocabulary")
    ids = [BOS_IDX]
    open_positions: list[int] = []
    for i, tok in enumerate(query.tokens):
        if i in accepted:
            ids.append(vocab.index[accepted[i]])
        elif i in mask_set:
            ids.append(MASK_IDX)
            open_positions.append(i)
        else:
            ids.append(vocab.encode_token(tok))
    ids.append(EOS_IDX)
    if len(ids) > max_seq:
        raise DataError(f"sequence length {len(ids)} exceeds model maximum {max_seq}")
    return ids, open_positions


def restore_step(
    model: EncoderModel,
    vocab: Vocabulary,
    net: GlyphNet,
    query: RestorationQuery,
    accepted: dict[int, str],
) -> tuple[CandidateSet, ...]:
    """Ranked candidates for the open positions given the accepted map."""
    ids, open_positions = _encode_query(vocab, query, accepted, model.config.max_seq)
    if not open_positions:
        return ()
    model.eval()
    with torch.no_grad():
        batch_ids, key_mask = pad_batch([ids])
        lp = forward_mlm(
            model, batch_ids, key_mask, [(0, pos + 1) for pos in open_positions]
        ).double().numpy()
    sets = []
    for row, pos in enumerate(open_positions):
        forms, scores = _rank_forms(lp[row], vocab, query.k)
        sets.append(
            CandidateSet(
                position=pos,
                entries=tuple(
                    Candidate(form=f, score=s, family_id=net.family_id(f))
                    for f, s in zip(forms, scores)
                ),
            )
        )
    return tuple(sets)


def restore_parallel(
    model: EncoderModel,
    vocab: Vocabulary,
    net: GlyphNet,
    query: RestorationQuery,
) -> tuple[CandidateSet, ...]:
    """One pass; all masked positions scored jointly but filled independently."""
    return restore_step(model, vocab, net, query, {})


def candidate_sets_payload(sets: Sequence[CandidateSet]) -> list[dict]:
    """JSON-ready form of candidate sets, shared by the CLI and the service."""
    return [
        {
            "position": cs.position,
            "entries": [
                {"form": c.form, "score": c.score, "family_id": c.family_id}
                for c in cs.entries
            ],
        }
        for cs in sets
    ]


def pick_next_commit(sets: Sequence[CandidateSet]) -> CandidateSet:
    """Highest top-1 score wins; exact ties fall to the smallest position."""
    if not sets:
        raise ValueError("no candidate sets to choose from")
    return min(sets, key=lambda s: (-s.entries[0].score, s.position))


@dataclass(frozen=True)
class GreedyResult:
    tokens: tuple[Token, ...]  # query tokens with committed forms substituted
    committed: tuple[tuple[int, str], ...]  # (position, form) in commit order
    steps: tuple[CandidateSet, ...]  # candidate set of each commit, at commit time
    pass_snapshots: tuple[tuple[CandidateSet, ...], ...]  # all open sets per pass


def restore_greedy(
    model: EncoderModel,
    vocab: Vocabulary,
    net: GlyphNet,
    query: RestorationQuery,
) -> GreedyResult:
    accepted: dict[int, str] = {}
    committed: list[tuple[int, str]] = []
    steps: list[CandidateSet] = []
    snapshots: list[tuple[CandidateSet, ...]] = []
    while True:
        sets = restore_step(model, vocab, net, query, accepted)
        if not sets:
            break
        snapshots.append(sets)
        chosen = pick_next_commit(sets)
        form = chosen.entries[0].form
        accepted[chosen.position] = form
        committed.append((chosen.position, form))
        steps.append(chosen)
    tokens = list(query.tokens)
    for pos, form in committed:
        tokens[pos] = Token.identifiable(form)
    return GreedyResult(
        tokens=tuple(tokens),
        committed=tuple(committed),
        steps=tuple(steps),
        pass_snapshots=tuple(snapshots),
    )
