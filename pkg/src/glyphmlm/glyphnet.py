"""Glyph families: transitive closure over allograph pairs, centroids, alignment.

A family is the connected component of the undirected pair graph. The
canonical representative of a family is its lexicographically smallest
member; ids assigned at build time sort families by that representative,
so the net is a pure function of the pair set. Tokens never mentioned in a
pair behave as implicit singleton families: only membership in a family of
size two or more marks a token as a glyph token for biasing and the family
loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .corpus import CorpusFormatError, DataError, Vocabulary
from .fileio import read_lines


@dataclass(frozen=True)
class AllographPair:
    token_a: str
    token_b: str
    era: Optional[str] = None
    source: Optional[str] = None


def parse_pair_lines(lines: Iterable[str]) -> tuple[AllographPair, ...]:
    """Tab-separated tokenA/tokenB with optional era and source columns."""
    pairs: list[AllographPair] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 2 or len(cols) > 4:
            raise CorpusFormatError(
                f"line {lineno}: expected 2 to 4 tab-separated columns, got {len(cols)}"
            )
        a, b = cols[0], cols[1]
        if not a or not b:
            raise CorpusFormatError(f"line {lineno}: empty token column")
        era = cols[2] if len(cols) > 2 and cols[2] else None
        source = cols[3] if len(cols) > 3 and cols[3] else None
        pairs.append(AllographPair(a, b, era=era, source=source))
    return tuple(pairs)


def parse_pair_file(path: str | Path) -> tuple[AllographPair, ...]:
    return parse_pair_lines(read_lines(path))


@dataclass(frozen=True)
class GlyphNet:
    families: tuple[tuple[str, ...], ...]
    member_to_family: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if not self.member_to_family:
            mapping = {
                tok: fid for fid, members in enumerate(self.families) for tok in members
            }
            object.__setattr__(self, "member_to_family", mapping)

    def family_id(self, token: str) -> Optional[int]:
        return self.member_to_family.get(token)

    def family_of(self, token: str) -> tuple[str, ...]:
        """Members of the token's family; unknown tokens are singletons."""
        fid = self.member_to_family.get(token)
        if fid is None:
            return (token,)
        return self.families[fid]

    def is_glyph_token(self, token: str) -> bool:
        fid = self.member_to_family.get(token)
        return fid is not None and len(self.families[fid]) >= 2

    def canonical(self, family_id: int) -> str:
        return self.families[family_id][0]

    def size_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for members in self.families:
            hist[len(members)] = hist.get(len(members), 0) + 1
        return dict(sorted(hist.items()))

    def to_dict(self) -> dict:
        return {"families": [list(f) for f in self.families]}

    @staticmethod
    def from_dict(data: dict) -> "GlyphNet":
        return GlyphNet(families=tuple(tuple(f) for f in data["families"]))


def build_families(pairs: Iterable[AllographPair]) -> GlyphNet:
    """Union-find closure; result independent of pair order and direction."""
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:  # path compression
            parent[x], x = root, parent[x]
        return root

    for p in pairs:
        for tok in (p.token_a, p.token_b):
            parent.setdefault(tok, tok)
        ra, rb = find(p.token_a), find(p.token_b)
        if ra != rb:
            # Union by lexicographic order keeps the walk deterministic.
            lo, hi = sorted((ra, rb))
            parent[hi] = lo
    groups: dict[str, list[str]] = {}
    for tok in parent:
        groups.setdefault(find(tok), []).append(tok)
    families = tuple(
        tuple(sorted(members))
        for members in sorted(groups.values(), key=lambda m: min(m))
    )
    return GlyphNet(families=families)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def compute_centroids(
    net: GlyphNet, vocab: Vocabulary, embeddings: np.ndarray
) -> dict[int, np.ndarray]:
    """Family id to mean member embedding; members absent from vocab are skipped."""
    cents: dict[int, np.ndarray] = {}
    for fid, members in enumerate(net.families):
        rows = [embeddings[vocab.index[m]] for m in members if m in vocab.index]
        if rows:
            cents[fid] = np.mean(np.asarray(rows, dtype=np.float64), axis=0)
    return cents


@dataclass(frozen=True)
class AlignResult:
    family_id: Optional[int]
    net: GlyphNet


def align_new_glyph(
    net: GlyphNet,
    token: str,
    vector: np.ndarray,
    centroids: dict[int, np.ndarray],
    threshold: float = 0.5,
) -> AlignResult:
    """Join the most-similar family at or above threshold, else a new singleton.

    Ties go to the smallest family id. Existing family ids are preserved; a
    new singleton is appended with the next id.
    """
    if net.family_id(token) is not None:
        raise DataError(f"token {token!r} already belongs to a family")
    best_fid: Optional[int] = None
    best_cos = -np.inf
    for fid in sorted(centroids):
        c = cosine(vector, centroids[fid])
        if c > best_cos:
            best_cos, best_fid = c, fid
    if best_fid is not None and best_cos >= threshold:
        families = list(net.families)
        families[best_fid] = tuple(sorted(families[best_fid] + (token,)))
        return AlignResult(family_id=best_fid, net=GlyphNet(families=tuple(families)))
    return AlignResult(family_id=None, net=GlyphNet(families=net.families + ((token,),)))
