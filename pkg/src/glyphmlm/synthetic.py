"""Parametric generators for formulaic benchmark corpora.

Two benchmark shapes are produced, both fully determined by a config and
seed:

* A restoration benchmark: formulaic templates whose slot is filled by a
  member of an allograph family. Family identity is carried by a handful of
  family-specific "associate" tokens scattered through the context, and one
  member per family is held out of every training text (it exists only in
  the pair list), so test slots always carry a form unseen during training.

* A dating benchmark: sequences whose allograph choices correlate with a
  latent dynasty label. Every family slot in a sequence leans toward the
  member that matches one bit of the dynasty index, so member co-occurrence
  within a sequence is era evidence.

All token forms are single code points so the corpora survive text
round-trips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DYNASTIES, Corpus, Inscription, Token
from .glyphnet import AllographPair
from .seeding import rng_for

_FAMILY_BASE = 0x4E00
_ASSOCIATE_BASE = 0x3400
_FILLER_BASE = 0xA000


def _char(base: int, offset: int) -> str:
    return chr(base + offset)


# ---------------------------------------------------------------------------
# restoration benchmark


@dataclass(frozen=True)
class RestorationSynthesisConfig:
    n_families: int = 50
    members_per_family: int = 6
    heldout_per_family: int = 1
    associates_per_family: int = 6
    associates_in_context: int = 3
    n_noise_fillers: int = 100
    noise_in_context: int = 5
    templates_per_family: int = 10
    test_per_family: int = 4
    seed: int = 0

    def __post_init__(self):
        if min(self.n_families, self.members_per_family, self.heldout_per_family) < 1:
            raise ValueError("family counts must be >= 1")
        if self.associates_in_context > self.associates_per_family:
            raise ValueError("cannot draw more associates than the family owns")
        if self.noise_in_context > self.n_noise_fillers:
            raise ValueError("cannot draw more noise tokens than exist")


@dataclass(frozen=True)
class RestorationBenchmark:
    train: Corpus
    test: Corpus
    pairs: tuple[AllographPair, ...]
    heldout_forms: frozenset[str]


def _family_members(cfg: RestorationSynthesisConfig, f: int) -> tuple[list[str], list[str]]:
    width = cfg.members_per_family + cfg.heldout_per_family
    forms = [_char(_FAMILY_BASE, f * width + j) for j in range(width)]
    return forms[: cfg.members_per_family], forms[cfg.members_per_family :]


def _restoration_sequence(
    rng: np.random.Generator, cfg: RestorationSynthesisConfig, f: int, slot_form: str
) -> tuple[Token, ...]:
    # Context cells are shuffled; the family slot sits at a fixed final
    # position so a masked slot is positionally distinct from a masked
    # context cell.
    associates = [
        _char(_ASSOCIATE_BASE, f * cfg.associates_per_family + int(a))
        for a in rng.choice(cfg.associates_per_family, cfg.associates_in_context, replace=False)
    ]
    noise = [
        _char(_FILLER_BASE, int(i))
        for i in rng.choice(cfg.n_noise_fillers, cfg.noise_in_context, replace=False)
    ]
    cells = associates + noise
    order = rng.permutation(len(cells))
    return tuple(Token.identifiable(cells[i]) for i in order) + (
        Token.identifiable(slot_form),
    )


def build_restoration_benchmark(cfg: RestorationSynthesisConfig) -> RestorationBenchmark:
    pairs: list[AllographPair] = []
    heldout: set[str] = set()
    train: list[Inscription] = []
    test: list[Inscription] = []
    for f in range(cfg.n_families):
        members, held = _family_members(cfg, f)
        heldout.update(held)
        chain = members + held
        pairs.extend(AllographPair(a, b) for a, b in zip(chain, chain[1:]))
        for t in range(cfg.templates_per_family):
            rng = rng_for(cfg.seed, "restoration-train", f, t)
            member = members[int(rng.integers(len(members)))]
            train.append(
                Inscription(
                    id=f"synr-train-f{f:03d}-t{t:03d}",
                    tokens=_restoration_sequence(rng, cfg, f, member),
                )
            )
        for t in range(cfg.test_per_family):
            rng = rng_for(cfg.seed, "restoration-test", f, t)
            gold = held[int(rng.integers(len(held)))]
            test.append(
                Inscription(
                    id=f"synr-test-f{f:03d}-t{t:03d}",
                    tokens=_restoration_sequence(rng, cfg, f, gold),
                )
            )
    return RestorationBenchmark(
        train=Corpus(inscriptions=tuple(train)),
        test=Corpus(inscriptions=tuple(test)),
        pairs=tuple(pairs),
        heldout_forms=frozenset(heldout),
    )


# ---------------------------------------------------------------------------
# dating benchmark


@dataclass(frozen=True)
class DatingSynthesisConfig:
    n_families: int = 30
    n_fillers: int = 100
    slots_per_seq: int = 4
    fillers_per_seq: int = 8
    consistency: float = 0.9
    adapt_sequences: int = 600
    labeled_train: int = 400
    labeled_test: int = 300
    seed: int = 0

    def __post_init__(self):
        if not 0.5 <= self.consistency <= 1.0:
            raise ValueError("consistency must be in [0.5, 1]")
        if self.slots_per_seq > self.n_families:
            raise ValueError("slots_per_seq cannot exceed n_families")
        if min(self.adapt_sequences, self.labeled_train, self.labeled_test) < 1:
            raise ValueError("sequence counts must be >= 1")


@dataclass(frozen=True)
class DatingBenchmark:
    adapt: Corpus
    finetune: Corpus
    test: Corpus
    pairs: tuple[AllographPair, ...]


def _dating_member(
    rng: np.random.Generator, cfg: DatingSynthesisConfig, family: int, dynasty: int
) -> str:
    # Families alternate between reading the high and the low bit of the
    # dynasty index; together the two groups identify all four labels.
    bit = (dynasty >> 1) & 1 if family % 2 == 0 else dynasty & 1
    member = bit if rng.random() < cfg.consistency else 1 - bit
    return _char(_FAMILY_BASE, 0x1000 + family * 2 + member)


def _dating_sequence(
    rng: np.random.Generator, cfg: DatingSynthesisConfig, dynasty: int
) -> tuple[Token, ...]:
    families = rng.choice(cfg.n_families, cfg.slots_per_seq, replace=False)
    slots = [_dating_member(rng, cfg, int(f), dynasty) for f in families]
    fillers = [
        _char(_FILLER_BASE, 0x800 + int(i))
        for i in rng.integers(cfg.n_fillers, size=cfg.fillers_per_seq)
    ]
    cells = slots + fillers
    order = rng.permutation(len(cells))
    return tuple(Token.identifiable(cells[i]) for i in order)


def build_dating_benchmark(cfg: DatingSynthesisConfig) -> DatingBenchmark:
    pairs = tuple(
        AllographPair(
            _char(_FAMILY_BASE, 0x1000 + f * 2), _char(_FAMILY_BASE, 0x1000 + f * 2 + 1)
        )
        for f in range(cfg.n_families)
    )

    def make(split: str, count: int, labeled: bool) -> Corpus:
        rows = []
        for i in range(count):
            rng = rng_for(cfg.seed, "dating", split, i)
            dynasty = int(rng.integers(4))
            rows.append(
                Inscription(
                    id=f"synd-{split}-{i:04d}",
                    tokens=_dating_sequence(rng, cfg, dynasty),
                    dynasty=DYNASTIES[dynasty] if labeled else None,
                )
            )
        return Corpus(inscriptions=tuple(rows))

    return DatingBenchmark(
        adapt=make("adapt", cfg.adapt_sequences, labeled=False),
        finetune=make("finetune", cfg.labeled_train, labeled=True),
        test=make("test", cfg.labeled_test, labeled=True),
        pairs=pairs,
    )


def pairs_tsv(pairs: tuple[AllographPair, ...]) -> str:
    """Serialize pairs in the two-column tab-separated exchange format."""
    return "".join(f"{p.token_a}\t{p.token_b}\n" for p in pairs)
