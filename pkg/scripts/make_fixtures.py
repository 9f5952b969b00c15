"""Regenerate the frozen test fixtures under fixtures/.

The golden audit numbers are tallied while the corpus is being constructed,
token by token, so they are independent of the library's own audit code: if
the audit implementation drifts, the fixture test catches it.

Run from the repository root:  python3 scripts/make_fixtures.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from glyphmlm.corpus import Corpus, Inscription, Token, write_corpus  # noqa: E402
from glyphmlm.fileio import write_atomic  # noqa: E402
from glyphmlm.seeding import rng_for  # noqa: E402

SEED = 20260814
FIXTURES = ROOT / "fixtures"

# Family members for the pair file: 40 chained families of size 4..8.
FAMILY_SIZES = [4 + (i % 5) for i in range(40)]
MEMBER_BASE = 0x7000
FILLER_BASE = 0xA400
N_FILLERS = 60
DYNASTIES = ("Shang", "WesternZhou", "SpringAutumn", "WarringStates")
PERIODS = ("Early", "Middle", "Late")
ERAS = ("OBI", "WesternZhou", "SpringAutumn", "WarringStates")
MIN_LENGTH = 4


def family_members(f: int) -> list[str]:
    start = MEMBER_BASE + sum(FAMILY_SIZES[:f])
    return [chr(start + j) for j in range(FAMILY_SIZES[f])]


def build_pairs() -> tuple[str, list[str]]:
    """Pair file text and the flat member alphabet."""
    rng = rng_for(SEED, "pairs")
    lines = [
        "# allograph pair fixture: chained families with redundant edges,",
        "# self-pairs, and optional era/source metadata columns",
    ]
    all_members: list[str] = []
    n_pairs = 0
    for f in range(len(FAMILY_SIZES)):
        members = family_members(f)
        all_members.extend(members)
        for a, b in zip(members, members[1:]):
            cols = [a, b]
            if rng.random() < 0.4:
                cols.append(str(ERAS[int(rng.integers(len(ERAS)))]))
                if rng.random() < 0.5:
                    cols.append(f"plate-{int(rng.integers(1, 400)):03d}")
            lines.append("\t".join(cols))
            n_pairs += 1
        # Redundant edge closing a triangle: same family, no new members.
        if len(members) >= 3 and rng.random() < 0.6:
            lines.append(f"{members[0]}\t{members[2]}")
            n_pairs += 1
    # A few self-pairs (singletons declared explicitly).
    for j in range(5):
        c = chr(MEMBER_BASE + 0x300 + j)
        lines.append(f"{c}\t{c}")
        n_pairs += 1
    assert n_pairs >= 200, n_pairs
    assert max(FAMILY_SIZES) >= 5  # chains of length >= 4 edges exist
    return "\n".join(lines) + "\n", all_members


def build_corpus(members: list[str]) -> tuple[Corpus, dict]:
    rng = rng_for(SEED, "corpus")
    fillers = [chr(FILLER_BASE + i) for i in range(N_FILLERS)]
    counts = {"identifiable": 0, "unreadable": 0, "undeciphered": 0}
    rows: list[Inscription] = []

    def sample_tokens(length: int) -> tuple[Token, ...]:
        toks = []
        for _ in range(length):
            r = rng.random()
            if r < 0.06:
                toks.append(Token.unreadable())
                counts["unreadable"] += 1
            elif r < 0.08:
                toks.append(Token.undeciphered(int(rng.integers(1, 21))))
                counts["undeciphered"] += 1
            elif r < 0.45:
                toks.append(Token.identifiable(members[int(rng.integers(len(members)))]))
                counts["identifiable"] += 1
            else:
                toks.append(Token.identifiable(fillers[int(rng.integers(len(fillers)))]))
                counts["identifiable"] += 1
        return tuple(toks)

    def labels(i: int):
        dynasty = period = provenance = None
        if rng.random() < 0.8:
            dynasty = DYNASTIES[int(rng.integers(4))]
            if rng.random() < 0.5:
                period = PERIODS[int(rng.integers(3))]
        if rng.random() < 0.3:
            provenance = f"site-{int(rng.integers(1, 30)):02d}"
        return dynasty, period, provenance

    for i in range(100):
        dynasty, period, provenance = labels(i)
        rows.append(
            Inscription(
                id=f"fx{i:04d}",
                tokens=sample_tokens(int(rng.integers(6, 15))),
                dynasty=dynasty,
                period=period,
                provenance=provenance,
            )
        )
    # Short records dropped by the length filter.
    n_short = 8
    for i in range(n_short):
        rows.append(
            Inscription(id=f"fxshort{i:02d}", tokens=sample_tokens(int(rng.integers(1, MIN_LENGTH))))
        )
    # Exact-text duplicates of existing normal records; ids sort after the
    # originals, so deduplication keeps the originals.
    n_dup = 6
    for i in range(n_dup):
        src = rows[int(rng.integers(100))]
        for t in src.tokens:
            counts[
                "identifiable"
                if t.kind.name == "IDENTIFIABLE"
                else "unreadable"
                if t.kind.name == "UNREADABLE"
                else "undeciphered"
            ] += 1
        rows.append(
            Inscription(id=f"fxdup{i:02d}", tokens=src.tokens, dynasty=src.dynasty, period=src.period)
        )
    total = sum(counts.values())
    golden = {
        "token_counts": {**counts, "total": total},
        "token_shares": {k: counts[k] / total for k in counts},
        "n_inscriptions": len(rows),
        "filter": {
            "min_length": MIN_LENGTH,
            "dedup": True,
            "kept": len(rows) - n_short - n_dup,
            "dropped_short": n_short,
            "dropped_duplicate": n_dup,
        },
    }
    return Corpus(inscriptions=tuple(rows)), golden


def build_patches(corpus: Corpus) -> str:
    first = corpus.inscriptions[0]
    # Swap the first identifiable cell for a sibling form, relabel another
    # record, and set a provenance.
    new_text = first.text
    target = next(t for t in first.tokens if t.kind.name == "IDENTIFIABLE")
    replacement = chr(ord(target.form) + 1 if ord(target.form) % 2 == 0 else ord(target.form) - 1)
    new_text = new_text.replace(target.form, replacement, 1)
    second = corpus.inscriptions[1]
    patches = [
        {
            "id": first.id,
            "field": "text",
            "old": first.text,
            "new": new_text,
            "citation": "recollation of the published rubbing, entry 17",
        },
        {
            "id": second.id,
            "field": "dynasty",
            "old": second.dynasty,
            "new": "WarringStates" if second.dynasty != "WarringStates" else "Shang",
            "citation": "revised attribution in excavation report vol. 3",
        },
        {
            "id": corpus.inscriptions[2].id,
            "field": "provenance",
            "old": corpus.inscriptions[2].provenance,
            "new": "site-99",
            "citation": "museum accession ledger correction",
        },
    ]
    return "".join(json.dumps(p, ensure_ascii=False) + "\n" for p in patches)


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    pairs_text, members = build_pairs()
    write_atomic(FIXTURES / "pairs_fixture.tsv", pairs_text)
    corpus, golden = build_corpus(members)
    write_corpus(corpus, FIXTURES / "corpus_fixture.jsonl")
    write_atomic(
        FIXTURES / "golden_audit.json",
        json.dumps(golden, indent=1, sort_keys=True, ensure_ascii=False) + "\n",
    )
    write_atomic(FIXTURES / "patches_fixture.jsonl", build_patches(corpus))
    print(f"pairs: {sum(1 for l in pairs_text.splitlines() if l and not l.startswith('#'))}")
    print(f"inscriptions: {golden['n_inscriptions']}  tokens: {golden['token_counts']}")


if __name__ == "__main__":
    main()
