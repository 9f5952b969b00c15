"""Inscription corpus model: parsing, auditing, filtering, patches, vocabulary.

Corpus files are UTF-8 line-delimited JSON records with fields
``id`` (string), ``text`` (string), and optional ``dynasty``, ``period``,
``provenance``. Inside ``text``, ``□`` encodes an Unreadable cell and
``{UNK:n}`` encodes the Undeciphered placeholder with id ``n``; every other
cell is one Identifiable token. A base character followed by combining marks
or variation selectors forms a single atomic cell.
"""

from __future__ import annotations

import enum
import hashlib
import json
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .fileio import dump_jsonl, read_lines, write_atomic

DYNASTIES = ("Shang", "WesternZhou", "SpringAutumn", "WarringStates")
PERIODS = ("Early", "Middle", "Late")

# Reserved vocabulary indices. The mask index never appears in stored text.
PAD_IDX = 0
MASK_IDX = 1
BOS_IDX = 2
EOS_IDX = 3
UNREADABLE_IDX = 4
_RESERVED_FORMS = ("[PAD]", "[MASK]", "[BOS]", "[EOS]", "[UNREADABLE]")

UNREADABLE_CHAR = "□"


class CorpusFormatError(ValueError):
    """Malformed corpus, patch, or pair input."""


class DataError(ValueError):
    """Well-formed input that violates a data-level contract."""


class TokenKind(enum.Enum):
    IDENTIFIABLE = "identifiable"
    UNREADABLE = "unreadable"
    UNDECIPHERED = "undeciphered"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    form: Optional[str] = None
    unk_id: Optional[int] = None

    def __post_init__(self):
        if self.kind is TokenKind.IDENTIFIABLE:
            if not self.form:
                raise DataError("identifiable token needs a non-empty form")
        elif self.kind is TokenKind.UNDECIPHERED:
            if self.unk_id is None or self.unk_id < 0:
                raise DataError("undeciphered token needs a non-negative id")

    @staticmethod
    def identifiable(form: str) -> "Token":
        return Token(TokenKind.IDENTIFIABLE, form=form)

    @staticmethod
    def unreadable() -> "Token":
        return Token(TokenKind.UNREADABLE)

    @staticmethod
    def undeciphered(unk_id: int) -> "Token":
        return Token(TokenKind.UNDECIPHERED, unk_id=unk_id)

    @property
    def text(self) -> str:
        """Surface encoding of the cell."""
        if self.kind is TokenKind.IDENTIFIABLE:
            return self.form
        if self.kind is TokenKind.UNREADABLE:
            return UNREADABLE_CHAR
        return "{UNK:%d}" % self.unk_id


@dataclass(frozen=True)
class Inscription:
    id: str
    tokens: tuple[Token, ...]
    dynasty: Optional[str] = None
    period: Optional[str] = None
    provenance: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise DataError("inscription id must be non-empty")
        if self.dynasty is not None and self.dynasty not in DYNASTIES:
            raise DataError(f"unknown dynasty label {self.dynasty!r}")
        if self.period is not None and self.period not in PERIODS:
            raise DataError(f"unknown period label {self.period!r}")

    @property
    def text(self) -> str:
        return "".join(t.text for t in self.tokens)


@dataclass(frozen=True)
class Corpus:
    inscriptions: tuple[Inscription, ...]
    kind: str = "inscriptional"

    def __post_init__(self):
        if self.kind not in ("inscriptional", "auxiliary"):
            raise DataError(f"unknown corpus kind {self.kind!r}")


# ---------------------------------------------------------------------------
# text parsing


def _is_cell_extender(ch: str) -> bool:
    # Combining marks and variation selectors attach to the preceding base.
    if unicodedata.combining(ch):
        return True
    cp = ord(ch)
    return 0xFE00 <= cp <= 0xFE0F or 0xE0100 <= cp <= 0xE01EF


def parse_text(text: str) -> tuple[Token, ...]:
    """Split encoded inscription text into token cells."""
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == UNREADABLE_CHAR:
            tokens.append(Token.unreadable())
            i += 1
        elif ch == "{":
            end = text.find("}", i)
            if end < 0:
                raise CorpusFormatError(f"unterminated brace group at offset {i}")
            body = text[i + 1 : end]
            if not body.startswith("UNK:"):
                raise CorpusFormatError(f"unknown brace group {{{body}}}")
            digits = body[4:]
            if not digits.isdigit():
                raise CorpusFormatError(f"bad undeciphered id in {{{body}}}")
            tokens.append(Token.undeciphered(int(digits)))
            i = end + 1
        elif ch == "}":
            raise CorpusFormatError(f"stray closing brace at offset {i}")
        else:
            j = i + 1
            while j < n and _is_cell_extender(text[j]):
                j += 1
            tokens.append(Token.identifiable(text[i:j]))
            i = j
    return tuple(tokens)


# ---------------------------------------------------------------------------
# record parsing / serialization

_RECORD_FIELDS = {"id", "text", "dynasty", "period", "provenance"}


def _record_to_inscription(rec: dict, lineno: int) -> Inscription:
    unknown = set(rec) - _RECORD_FIELDS
    if unknown:
        raise CorpusFormatError(
            f"line {lineno}: unknown field(s) {sorted(unknown)}"
        )
    for req in ("id", "text"):
        if req not in rec:
            raise CorpusFormatError(f"line {lineno}: missing field {req!r}")
    if not isinstance(rec["id"], str) or not isinstance(rec["text"], str):
        raise CorpusFormatError(f"line {lineno}: id and text must be strings")
    for opt in ("dynasty", "period", "provenance"):
        v = rec.get(opt)
        if v is not None and not isinstance(v, str):
            raise CorpusFormatError(f"line {lineno}: field {opt!r} must be a string")
    try:
        return Inscription(
            id=rec["id"],
            tokens=parse_text(rec["text"]),
            dynasty=rec.get("dynasty"),
            period=rec.get("period"),
            provenance=rec.get("provenance"),
        )
    except (CorpusFormatError, DataError) as exc:
        raise CorpusFormatError(f"line {lineno}: {exc}") from exc


def parse_corpus_lines(lines: Sequence[str], kind: str = "inscriptional") -> Corpus:
    inscriptions: list[Inscription] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise CorpusFormatError(f"line {lineno}: record must be a JSON object")
        ins = _record_to_inscription(rec, lineno)
        if ins.id in seen_ids:
            raise CorpusFormatError(f"line {lineno}: duplicate id {ins.id!r}")
        seen_ids.add(ins.id)
        inscriptions.append(ins)
    return Corpus(inscriptions=tuple(inscriptions), kind=kind)


def parse_corpus_file(path: str | Path, kind: str = "inscriptional") -> Corpus:
    return parse_corpus_lines(read_lines(path), kind=kind)


def write_corpus(corpus: Corpus, path: str | Path | None) -> str:
    """Serialize to line-delimited records; write atomically when a path is given."""
    records = []
    for ins in corpus.inscriptions:
        rec: dict = {"id": ins.id, "text": ins.text}
        for key in ("dynasty", "period", "provenance"):
            value = getattr(ins, key)
            if value is not None:
                rec[key] = value
        records.append(rec)
    data = dump_jsonl(records)
    if path is not None:
        write_atomic(path, data)
    return data


# ---------------------------------------------------------------------------
# audit


@dataclass(frozen=True)
class TokenTypeReport:
    identifiable: int
    unreadable: int
    undeciphered: int
    n_inscriptions: int

    @property
    def total(self) -> int:
        return self.identifiable + self.unreadable + self.undeciphered

    @property
    def share_identifiable(self) -> float:
        return self.identifiable / self.total if self.total else 0.0

    @property
    def share_unreadable(self) -> float:
        return self.unreadable / self.total if self.total else 0.0

    @property
    def share_undeciphered(self) -> float:
        return self.undeciphered / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "identifiable": self.identifiable,
            "unreadable": self.unreadable,
            "undeciphered": self.undeciphered,
            "total": self.total,
            "n_inscriptions": self.n_inscriptions,
            "share_identifiable": self.share_identifiable,
            "share_unreadable": self.share_unreadable,
            "share_undeciphered": self.share_undeciphered,
        }


def audit(corpus: Corpus) -> TokenTypeReport:
    counts = {k: 0 for k in TokenKind}
    for ins in corpus.inscriptions:
        for tok in ins.tokens:
            counts[tok.kind] += 1
    return TokenTypeReport(
        identifiable=counts[TokenKind.IDENTIFIABLE],
        unreadable=counts[TokenKind.UNREADABLE],
        undeciphered=counts[TokenKind.UNDECIPHERED],
        n_inscriptions=len(corpus.inscriptions),
    )


# ---------------------------------------------------------------------------
# filtering


@dataclass(frozen=True)
class FilterReport:
    kept: int
    dropped_short: int
    dropped_duplicate: int


def filter_corpus(
    corpus: Corpus, min_length: int = 4, dedup: bool = True
) -> tuple[Corpus, FilterReport]:
    """Drop records shorter than ``min_length`` cells, then exact-text duplicates.

    Length counts all token kinds. Among records with identical text the one
    with the lexicographically smallest id is kept, at its own input position.
    """
    long_enough = [i for i in corpus.inscriptions if len(i.tokens) >= min_length]
    dropped_short = len(corpus.inscriptions) - len(long_enough)
    if not dedup:
        kept = long_enough
        dropped_dup = 0
    else:
        keeper_by_text: dict[str, Inscription] = {}
        for ins in long_enough:
            cur = keeper_by_text.get(ins.text)
            if cur is None or ins.id < cur.id:
                keeper_by_text[ins.text] = ins
        keepers = set(id(v) for v in keeper_by_text.values())
        kept = [i for i in long_enough if id(i) in keepers]
        dropped_dup = len(long_enough) - len(kept)
    return (
        Corpus(inscriptions=tuple(kept), kind=corpus.kind),
        FilterReport(kept=len(kept), dropped_short=dropped_short, dropped_duplicate=dropped_dup),
    )


# ---------------------------------------------------------------------------
# patches

_PATCH_FIELDS = {"id", "field", "old", "new", "citation"}
_PATCHABLE = ("text", "dynasty", "period", "provenance")


@dataclass(frozen=True)
class Patch:
    target_id: str
    field_name: str
    old: Optional[str]
    new: Optional[str]
    citation: str


def parse_patch_lines(lines: Sequence[str]) -> tuple[Patch, ...]:
    patches: list[Patch] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise CorpusFormatError(f"line {lineno}: record must be a JSON object")
        unknown = set(rec) - _PATCH_FIELDS
        if unknown:
            raise CorpusFormatError(f"line {lineno}: unknown field(s) {sorted(unknown)}")
        missing = {"id", "field", "citation"} - set(rec)
        if missing:
            raise CorpusFormatError(f"line {lineno}: missing field(s) {sorted(missing)}")
        if rec["field"] not in _PATCHABLE:
            raise CorpusFormatError(f"line {lineno}: field {rec['field']!r} is not patchable")
        if not isinstance(rec["citation"], str) or not rec["citation"]:
            raise CorpusFormatError(f"line {lineno}: citation must be a non-empty string")
        patches.append(
            Patch(
                target_id=rec["id"],
                field_name=rec["field"],
                old=rec.get("old"),
                new=rec.get("new"),
                citation=rec["citation"],
            )
        )
    return tuple(patches)


def parse_patch_file(path: str | Path) -> tuple[Patch, ...]:
    return parse_patch_lines(read_lines(path))


def apply_patches(corpus: Corpus, patches: Iterable[Patch]) -> Corpus:
    """Apply field-level edits; each patch's old value must match the record."""
    by_id = {ins.id: ins for ins in corpus.inscriptions}
    for p in patches:
        ins = by_id.get(p.target_id)
        if ins is None:
            raise DataError(f"patch targets unknown id {p.target_id!r}")
        current = ins.text if p.field_name == "text" else getattr(ins, p.field_name)
        if current != p.old:
            raise DataError(
                f"patch old value mismatch for {p.target_id!r}.{p.field_name}: "
                f"have {current!r}, patch expects {p.old!r}"
            )
        if p.field_name == "text":
            if p.new is None:
                raise DataError(f"patch for {p.target_id!r}: text cannot be null")
            try:
                updated = replace(ins, tokens=parse_text(p.new))
            except CorpusFormatError as exc:
                raise DataError(f"patch for {p.target_id!r}: {exc}") from exc
        else:
            try:
                updated = replace(ins, **{p.field_name: p.new})
            except DataError as exc:
                raise DataError(f"patch for {p.target_id!r}: {exc}") from exc
        by_id[p.target_id] = updated
    return Corpus(
        inscriptions=tuple(by_id[ins.id] for ins in corpus.inscriptions),
        kind=corpus.kind,
    )


# ---------------------------------------------------------------------------
# vocabulary


@dataclass(frozen=True)
class Vocabulary:
    """Deterministic index: reserved block, UNK placeholders, sorted forms."""

    forms: tuple[str, ...]
    n_reserved: int
    index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if not self.index:
            object.__setattr__(self, "index", {f: i for i, f in enumerate(self.forms)})

    @property
    def size(self) -> int:
        return len(self.forms)

    @property
    def vocab_hash(self) -> str:
        return hashlib.sha256("\n".join(self.forms).encode("utf-8")).hexdigest()

    def is_form_index(self, idx: int) -> bool:
        """True for Identifiable form indices (restoration candidates)."""
        return self.n_reserved <= idx < self.size

    def encode_token(self, token: Token) -> int:
        if token.kind is TokenKind.UNREADABLE:
            return UNREADABLE_IDX
        key = token.text
        idx = self.index.get(key)
        if idx is None:
            raise DataError(f"token {key!r} not in vocabulary")
        return idx


def build_vocab(corpora: Iterable[Corpus], pair_tokens: Iterable[str] = ()) -> Vocabulary:
    """Union of corpus forms and pair-file tokens under a fixed reserved block."""
    unk_ids: set[int] = set()
    forms: set[str] = set(pair_tokens)
    for corpus in corpora:
        for ins in corpus.inscriptions:
            for tok in ins.tokens:
                if tok.kind is TokenKind.IDENTIFIABLE:
                    forms.add(tok.form)
                elif tok.kind is TokenKind.UNDECIPHERED:
                    unk_ids.add(tok.unk_id)
    unk_forms = tuple("{UNK:%d}" % i for i in sorted(unk_ids))
    all_forms = _RESERVED_FORMS + unk_forms + tuple(sorted(forms))
    return Vocabulary(forms=all_forms, n_reserved=len(_RESERVED_FORMS) + len(unk_forms))


def parse_pair_file_tokens(path: str | Path) -> tuple[str, ...]:
    """Both token columns of a pair file, deduplicated, in file order."""
    from .glyphnet import parse_pair_file

    seen: dict[str, None] = {}
    for pair in parse_pair_file(path):
        seen.setdefault(pair.token_a)
        seen.setdefault(pair.token_b)
    return tuple(seen)


def encode_inscription(
    vocab: Vocabulary, ins: Inscription, max_len: int | None = None
) -> list[int]:
    """Token indices with boundary markers: [BOS] cells... [EOS]."""
    ids = [BOS_IDX] + [vocab.encode_token(t) for t in ins.tokens] + [EOS_IDX]
    if max_len is not None and len(ids) > max_len:
        raise DataError(
            f"inscription {ins.id!r} has {len(ids)} encoded positions, limit {max_len}"
        )
    return ids


def token_form_set(corpus: Corpus) -> frozenset[str]:
    """All Identifiable forms occurring in the corpus."""
    return frozenset(
        tok.form
        for ins in corpus.inscriptions
        for tok in ins.tokens
        if tok.kind is TokenKind.IDENTIFIABLE
    )
