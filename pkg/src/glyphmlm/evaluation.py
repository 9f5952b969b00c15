"""Restoration and dating metrics, representation geometry, and reports.

Restoration is scored per masked position from a ranked candidate list:
exact hit at K, and family hit at K (any ranked form in the gold's family).
Dating is scored flat (dynasty accuracy and macro-F1 over classes observed
in gold or predictions) and hierarchically (period credit requires the
dynasty to be right; macro-F1 runs over observed dynasty-period pairs).
Reports serialize to canonical JSON so equal inputs yield equal bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .corpus import (
    DYNASTIES,
    PERIODS,
    Corpus,
    TokenKind,
    Vocabulary,
    encode_inscription,
    token_form_set,
)
from .encoder import EncoderModel, forward_classify, forward_mlm, pad_batch
from .glyphnet import GlyphNet, cosine
from .fileio import write_atomic

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RestorationResult:
    inscription_id: str
    position: int
    gold: str
    forms: tuple[str, ...]  # best first; strictly ordered
    scores: tuple[float, ...]


def exact_at_k(results: Sequence[RestorationResult], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not results:
        raise ValueError("no results to score")
    return sum(1 for r in results if r.gold in r.forms[:k]) / len(results)


def family_at_k(results: Sequence[RestorationResult], net: GlyphNet, k: int) -> float:
    """Hit when any of the top-K forms belongs to the gold's family."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not results:
        raise ValueError("no results to score")
    hits = 0
    for r in results:
        family = set(net.family_of(r.gold))
        if any(f in family for f in r.forms[:k]):
            hits += 1
    return hits / len(results)


# ---------------------------------------------------------------------------
# label metrics


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    macro_f1: float
    n: int
    per_class: dict[str, float]


def label_metrics(gold: Sequence[str], pred: Sequence[str]) -> ClassificationReport:
    """Accuracy and macro-F1 over classes observed in gold or predictions.

    A class with zero precision and recall contributes F1 = 0; classes
    absent from both sides are excluded from the macro average.
    """
    if len(gold) != len(pred):
        raise ValueError("gold and pred lengths differ")
    if not gold:
        raise ValueError("no labels to score")
    observed = sorted(set(gold) | set(pred))
    per_class: dict[str, float] = {}
    for c in observed:
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        fp = sum(1 for g, p in zip(gold, pred) if g != c and p == c)
        fn = sum(1 for g, p in zip(gold, pred) if g == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        per_class[c] = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    correct = sum(1 for g, p in zip(gold, pred) if g == p)
    return ClassificationReport(
        accuracy=correct / len(gold),
        macro_f1=sum(per_class.values()) / len(per_class),
        n=len(gold),
        per_class=per_class,
    )


@dataclass(frozen=True)
class HierReport:
    acc_dyn: float
    f1_dyn: float
    acc_per: float
    f1_per: float
    period_total: int
    period_evaluated: int


def hierarchical_metrics(
    gold_dyn: Sequence[str],
    gold_per: Sequence[Optional[str]],
    pred_dyn: Sequence[str],
    pred_per: Sequence[str],
) -> HierReport:
    """Dynasty stage plus period stage conditioned on a correct dynasty.

    Both stages run over the period-covered subset (records with a gold
    period); uncovered records only feed the coverage fields. The period
    stage treats (dynasty, period) as a joint label, so period credit
    requires both levels to match, and a full-pair hit implies a dynasty
    hit over the same denominator: acc_per can never exceed acc_dyn.
    """
    n = len(gold_dyn)
    if not (len(gold_per) == len(pred_dyn) == len(pred_per) == n) or n == 0:
        raise ValueError("all label sequences must share a non-empty length")
    g_dyn_cov, p_dyn_cov, g_pairs, p_pairs = [], [], [], []
    for gd, gp, pd, pp in zip(gold_dyn, gold_per, pred_dyn, pred_per):
        if gp is None:
            continue
        g_dyn_cov.append(gd)
        p_dyn_cov.append(pd)
        g_pairs.append(f"{gd}/{gp}")
        p_pairs.append(f"{pd}/{pp}")
    if not g_pairs:
        return HierReport(
            acc_dyn=0.0, f1_dyn=0.0, acc_per=0.0, f1_per=0.0,
            period_total=n, period_evaluated=0,
        )
    dyn = label_metrics(g_dyn_cov, p_dyn_cov)
    per = label_metrics(g_pairs, p_pairs)
    return HierReport(
        acc_dyn=dyn.accuracy,
        f1_dyn=dyn.macro_f1,
        acc_per=per.accuracy,
        f1_per=per.macro_f1,
        period_total=n,
        period_evaluated=len(g_pairs),
    )


# ---------------------------------------------------------------------------
# representation geometry


@dataclass(frozen=True)
class RepresentationReport:
    intra_cos: float
    nearest_inter_cos: Optional[float]
    n_families: int
    families: tuple[dict, ...]


def representation_report(
    net: GlyphNet, vocab: Vocabulary, embeddings: np.ndarray
) -> RepresentationReport:
    """Cohesion and separation of family embeddings.

    Considers families with at least two members present in the vocabulary.
    intra_cos averages, over families, the mean cosine between members and
    their centroid; nearest_inter_cos averages each family's maximum cosine
    to another considered family's centroid (None with fewer than two).
    """
    cents: list[np.ndarray] = []
    intras: list[float] = []
    rows_meta: list[dict] = []
    for fid, members in enumerate(net.families):
        present = [m for m in members if m in vocab.index]
        if len(present) < 2:
            continue
        rows = np.asarray([embeddings[vocab.index[m]] for m in present], dtype=np.float64)
        if all(np.array_equal(rows[0], r) for r in rows[1:]) and np.linalg.norm(rows[0]):
            # Identical member rows: the centroid IS the row and the cosine is
            # exactly 1 by definition; computing them would round by a ulp.
            centroid = rows[0].copy()
            intra = 1.0
        else:
            centroid = rows.mean(axis=0)
            intra = float(np.mean([cosine(r, centroid) for r in rows]))
        cents.append(centroid)
        intras.append(intra)
        rows_meta.append({"family_id": fid, "members": list(present), "intra_cos": intra})
    if not cents:
        return RepresentationReport(
            intra_cos=0.0, nearest_inter_cos=None, n_families=0, families=()
        )
    nearest: Optional[float]
    if len(cents) >= 2:
        per_family = []
        for i in range(len(cents)):
            per_family.append(
                max(cosine(cents[i], cents[j]) for j in range(len(cents)) if j != i)
            )
        nearest = float(np.mean(per_family))
        for meta, val in zip(rows_meta, per_family):
            meta["nearest_inter_cos"] = val
    else:
        nearest = None
    return RepresentationReport(
        intra_cos=float(np.mean(intras)),
        nearest_inter_cos=nearest,
        n_families=len(cents),
        families=tuple(rows_meta),
    )


# ---------------------------------------------------------------------------
# model-driven evaluation


def unseen_audit(train_forms: frozenset[str], results: Sequence[RestorationResult]) -> dict:
    seen = sum(1 for r in results if r.gold in train_forms)
    return {
        "total_positions": len(results),
        "seen_gold": seen,
        "unseen_gold": len(results) - seen,
    }


def _rank_forms(
    log_probs: np.ndarray, vocab: Vocabulary, top_k: int
) -> tuple[tuple[str, ...], tuple[float, ...]]:
    """Top forms by score; ties break toward the smaller vocabulary index."""
    form_idx = np.arange(vocab.n_reserved, vocab.size)
    scores = log_probs[form_idx]
    order = np.lexsort((form_idx, -scores))[:top_k]
    chosen = form_idx[order]
    return (
        tuple(vocab.forms[i] for i in chosen),
        tuple(float(log_probs[i]) for i in chosen),
    )


def restoration_eval(
    model: EncoderModel,
    vocab: Vocabulary,
    net: GlyphNet,
    corpus: Corpus,
    ks: Sequence[int] = (1, 5, 10),
    train_corpus: Optional[Corpus] = None,
    batch_size: int = 64,
) -> tuple[list[RestorationResult], dict]:
    """Single-position prediction over every identifiable cell.

    When a training corpus is given, evaluation keeps only positions whose
    gold form never occurs in training; the split audit is always emitted.
    """
    if not ks or min(ks) < 1:
        raise ValueError("ks must be positive")
    top_k = max(ks)
    train_forms = token_form_set(train_corpus) if train_corpus is not None else None
    items: list[tuple] = []  # (inscription, position, encoded ids)
    total_positions = 0
    skipped_seen = 0
    for ins in corpus.inscriptions:
        encoded = encode_inscription(vocab, ins, max_len=model.config.max_seq)
        for pos, tok in enumerate(ins.tokens):
            if tok.kind is not TokenKind.IDENTIFIABLE:
                continue
            total_positions += 1
            if train_forms is not None and tok.form in train_forms:
                skipped_seen += 1
                continue
            items.append((ins, pos, encoded))
    results: list[RestorationResult] = []
    model.eval()
    from .corpus import MASK_IDX

    with torch.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start : start + batch_size]
            seqs = []
            for ins, pos, encoded in chunk:
                masked = list(encoded)
                masked[pos + 1] = MASK_IDX
                seqs.append(masked)
            ids, key_mask = pad_batch(seqs)
            positions = [(row, chunk[row][1] + 1) for row in range(len(chunk))]
            lp = forward_mlm(model, ids, key_mask, positions).double().numpy()
            for row, (ins, pos, _) in enumerate(chunk):
                forms, scores = _rank_forms(lp[row], vocab, top_k)
                results.append(
                    RestorationResult(
                        inscription_id=ins.id,
                        position=pos,
                        gold=ins.tokens[pos].form,
                        forms=forms,
                        scores=scores,
                    )
                )
    audit = {
        "corpus_positions": total_positions,
        "evaluated_positions": len(results),
        "train_filter_applied": train_forms is not None,
        "skipped_seen_forms": skipped_seen,
    }
    if results and train_forms is not None:
        audit.update(unseen_audit(frozenset(train_forms), results))
    metrics = {
        "exact": {str(k): exact_at_k(results, k) for k in ks} if results else {},
        "family": {str(k): family_at_k(results, net, k) for k in ks} if results else {},
    }
    report = {
        "schema_version": SCHEMA_VERSION,
        "task": "restoration",
        "ks": sorted(int(k) for k in ks),
        "n_results": len(results),
        "metrics": metrics,
        "audit": audit,
    }
    return results, report


@dataclass(frozen=True)
class DatingResult:
    inscription_id: str
    gold_dynasty: Optional[str]
    gold_period: Optional[str]
    pred_dynasty: str
    pred_period: str
    dynasty_probs: dict[str, float]
    period_probs: dict[str, float]


def dating_eval(
    model: EncoderModel,
    vocab: Vocabulary,
    corpus: Corpus,
    batch_size: int = 64,
) -> tuple[list[DatingResult], dict]:
    """Dynasty/period prediction per inscription; unlabeled rows only add coverage."""
    model.eval()
    rows: list[DatingResult] = []
    inscriptions = list(corpus.inscriptions)
    with torch.no_grad():
        for start in range(0, len(inscriptions), batch_size):
            chunk = inscriptions[start : start + batch_size]
            seqs = [encode_inscription(vocab, ins, max_len=model.config.max_seq) for ins in chunk]
            ids, key_mask = pad_batch(seqs)
            dyn_lp = forward_classify(model, ids, key_mask, head="dynasty").double().numpy()
            per_lp = forward_classify(model, ids, key_mask, head="period").double().numpy()
            for i, ins in enumerate(chunk):
                dp = np.exp(dyn_lp[i])
                pp = np.exp(per_lp[i])
                rows.append(
                    DatingResult(
                        inscription_id=ins.id,
                        gold_dynasty=ins.dynasty,
                        gold_period=ins.period,
                        pred_dynasty=DYNASTIES[int(np.argmax(dyn_lp[i]))],
                        pred_period=PERIODS[int(np.argmax(per_lp[i]))],
                        dynasty_probs={d: float(p) for d, p in zip(DYNASTIES, dp)},
                        period_probs={d: float(p) for d, p in zip(PERIODS, pp)},
                    )
                )
    labeled = [r for r in rows if r.gold_dynasty is not None]
    metrics: dict = {}
    if labeled:
        flat = label_metrics([r.gold_dynasty for r in labeled], [r.pred_dynasty for r in labeled])
        hier = hierarchical_metrics(
            [r.gold_dynasty for r in labeled],
            [r.gold_period for r in labeled],
            [r.pred_dynasty for r in labeled],
            [r.pred_period for r in labeled],
        )
        metrics = {
            "dynasty": {"accuracy": flat.accuracy, "macro_f1": flat.macro_f1},
            "hierarchical": {
                "acc_dyn": hier.acc_dyn,
                "f1_dyn": hier.f1_dyn,
                "acc_per": hier.acc_per,
                "f1_per": hier.f1_per,
                "period_total": hier.period_total,
                "period_evaluated": hier.period_evaluated,
            },
        }
    report = {
        "schema_version": SCHEMA_VERSION,
        "task": "dating",
        "n_results": len(rows),
        "audit": {
            "total_inscriptions": len(rows),
            "dynasty_labeled": len(labeled),
            "period_labeled": sum(1 for r in rows if r.gold_period is not None),
        },
        "metrics": metrics,
    }
    return rows, report


# ---------------------------------------------------------------------------
# serialization


def report_to_json(report: dict) -> str:
    """Canonical JSON: sorted keys, stable float repr, trailing newline."""
    return json.dumps(report, sort_keys=True, ensure_ascii=False, indent=1) + "\n"


def render_text_report(report: dict) -> str:
    """Plain-text table mirroring the metric layout of the structured report."""
    lines: list[str] = []
    task = report.get("task", "?")
    n = report.get("n_results", 0)
    if task == "restoration":
        lines.append(f"Restoration metrics (n={n})")
        exact = report.get("metrics", {}).get("exact", {})
        family = report.get("metrics", {}).get("family", {})
        ks = report.get("ks", sorted(int(x) for x in exact))
        header = "".join(f"{f'E@{k}':>9}" for k in ks) + "".join(f"{f'F@{k}':>9}" for k in ks)
        row = "".join(
            f"{100 * exact[str(k)]:>9.2f}" if str(k) in exact else f"{'-':>9}" for k in ks
        ) + "".join(
            f"{100 * family[str(k)]:>9.2f}" if str(k) in family else f"{'-':>9}" for k in ks
        )
        lines.append(header)
        lines.append(row)
        audit = report.get("audit", {})
        if audit:
            lines.append(
                "audit: evaluated={} corpus_positions={} train_filter={}".format(
                    audit.get("evaluated_positions"),
                    audit.get("corpus_positions"),
                    audit.get("train_filter_applied"),
                )
            )
    elif task == "dating":
        lines.append(f"Dating metrics (n={n})")
        m = report.get("metrics", {})
        dyn = m.get("dynasty", {})
        hier = m.get("hierarchical", {})
        lines.append(f"{'stage':<10}  {'Acc':>7}  {'MacroF1':>8}")
        if dyn:
            lines.append(
                f"{'Dynasty':<10}  {100 * dyn['accuracy']:>7.2f}  {100 * dyn['macro_f1']:>8.2f}"
            )
        if hier:
            lines.append(
                f"{'Hier-Dyn':<10}  {100 * hier['acc_dyn']:>7.2f}  {100 * hier['f1_dyn']:>8.2f}"
            )
            lines.append(
                f"{'Hier-Per':<10}  {100 * hier['acc_per']:>7.2f}  {100 * hier['f1_per']:>8.2f}"
                f"  (period coverage {hier['period_evaluated']}/{hier['period_total']})"
            )
    else:
        lines.append(f"Report ({task}), n={n}")
        lines.append(report_to_json(report).rstrip())
    return "\n".join(lines) + "\n"


def write_report(report: dict, path, fmt: str = "structured") -> None:
    if fmt == "structured":
        write_atomic(path, report_to_json(report))
    elif fmt == "text":
        write_atomic(path, render_text_report(report))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
