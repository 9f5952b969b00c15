"""Command-line entry point covering the full pipeline.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure. Every artifact is written atomically, and every subcommand is
deterministic given its --seed (none of the outputs embed timestamps).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .corpus import (
    Corpus,
    CorpusFormatError,
    DataError,
    apply_patches,
    audit,
    build_vocab,
    filter_corpus,
    parse_corpus_file,
    parse_patch_file,
    parse_text,
    write_corpus,
)
from .decode import (
    candidate_sets_payload,
    query_from_text,
    restore_greedy,
    restore_parallel,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import (
    dating_eval,
    render_text_report,
    report_to_json,
    restoration_eval,
    write_report,
)
from .fileio import write_atomic
from .glyphnet import GlyphNet, build_families, parse_pair_file
from .corpus import parse_pair_file_tokens
from .trainer import (
    FineTuneConfig,
    NumericError,
    RunConfig,
    fine_tune_dating,
    run,
    write_train_log,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

CONFIG_DIR_ENV = "GLYPHMLM_CONFIG_DIR"


class UsageError(Exception):
    """Invalid invocation that argparse cannot catch on its own."""


# ---------------------------------------------------------------------------
# small rendering helpers


def _render_token_table(title: str, d: dict) -> list[str]:
    lines = [title]
    lines.append(f"{'type':<14}{'count':>8}{'share %':>10}")
    for key in ("identifiable", "unreadable", "undeciphered"):
        lines.append(f"{key:<14}{d[key]:>8}{100 * d['share_' + key]:>10.2f}")
    lines.append(f"{'total':<14}{d['total']:>8}{'':>10}")
    return lines


def _emit(payload: dict, fmt: str, out_path: str | None, text_renderer) -> None:
    text = text_renderer(payload) if fmt == "text" else report_to_json(payload)
    sys.stdout.write(text)
    if out_path:
        write_atomic(out_path, text if fmt == "text" else report_to_json(payload))


# ---------------------------------------------------------------------------
# subcommand handlers


def _resolve_config_path(raw: str) -> Path:
    p = Path(raw)
    if p.exists():
        return p
    env = os.environ.get(CONFIG_DIR_ENV)
    if env and not p.is_absolute():
        candidate = Path(env) / p
        if candidate.exists():
            return candidate
    return p


def cmd_prep(args) -> int:
    corpus = parse_corpus_file(args.in_path, kind=args.kind)
    if args.patch:
        corpus = apply_patches(corpus, parse_patch_file(args.patch))
    input_audit = audit(corpus)
    filtered, frep = filter_corpus(corpus, min_length=args.min_len, dedup=not args.no_dedup)
    write_corpus(filtered, args.out)
    payload = {
        "schema_version": 1,
        "task": "prep",
        "input": input_audit.to_dict(),
        "filter": {
            "min_length": args.min_len,
            "dedup": not args.no_dedup,
            "kept": frep.kept,
            "dropped_short": frep.dropped_short,
            "dropped_duplicate": frep.dropped_duplicate,
        },
        "output": audit(filtered).to_dict(),
    }

    def render(p: dict) -> str:
        lines = _render_token_table(
            f"Input corpus ({p['input']['n_inscriptions']} inscriptions)", p["input"]
        )
        f = p["filter"]
        lines.append(
            f"filter: kept={f['kept']} dropped_short={f['dropped_short']} "
            f"dropped_duplicate={f['dropped_duplicate']} "
            f"(min_length={f['min_length']}, dedup={f['dedup']})"
        )
        lines += _render_token_table(
            f"Output corpus ({p['output']['n_inscriptions']} inscriptions)", p["output"]
        )
        return "\n".join(lines) + "\n"

    _emit(payload, args.format, args.report, render)
    return EXIT_OK


def cmd_glyphnet(args) -> int:
    pairs = parse_pair_file(args.pairs)
    net = build_families(pairs)
    sizes = net.size_histogram()
    glyph_tokens = sum(s * c for s, c in sizes.items() if s >= 2)
    payload = {
        "schema_version": 1,
        "task": "glyphnet",
        "stats": {
            "n_pairs": len(pairs),
            "n_families": len(net.families),
            "n_glyph_tokens": glyph_tokens,
            "size_histogram": {str(k): v for k, v in sorted(sizes.items())},
            "largest_family": max((len(f) for f in net.families), default=0),
        },
        "families": net.to_dict(),
    }

    def render(p: dict) -> str:
        s = p["stats"]
        lines = [
            f"pairs: {s['n_pairs']}",
            f"families: {s['n_families']} (largest {s['largest_family']}, "
            f"{s['n_glyph_tokens']} tokens in multi-member families)",
            "size histogram: "
            + ", ".join(f"{k}:{v}" for k, v in s["size_histogram"].items()),
        ]
        return "\n".join(lines) + "\n"

    _emit(payload, args.format, None, render)
    if args.out:
        # The families themselves are only useful structured.
        write_atomic(args.out, report_to_json(payload))
    return EXIT_OK


def _load_corpora_and_net(args, need_tapt=True):
    tapt = parse_corpus_file(args.tapt) if need_tapt else None
    dapt = parse_corpus_file(args.dapt, kind="auxiliary") if args.dapt else None
    if args.pairs:
        pairs = parse_pair_file(args.pairs)
        net = build_families(pairs)
        pair_tokens = parse_pair_file_tokens(args.pairs)
    else:
        net = GlyphNet(families=())
        pair_tokens = ()
    return tapt, dapt, net, pair_tokens


def cmd_train(args) -> int:
    cfg = RunConfig.from_json(_resolve_config_path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    tapt, dapt, net, pair_tokens = _load_corpora_and_net(args)
    corpora = [c for c in (tapt, dapt) if c is not None]
    vocab = build_vocab(corpora, pair_tokens=pair_tokens)
    outcome = run(cfg, tapt, net, vocab, dapt_corpus=dapt)
    save_checkpoint(args.out, outcome.model, vocab, outcome.stage_meta)
    if args.log:
        write_train_log(outcome.records, args.log)
    final = outcome.records[-1]["total"] if outcome.records else None
    sys.stdout.write(
        f"schedule={cfg.schedule} steps={len(outcome.records)} "
        f"final_loss={'-' if final is None else f'{final:.4f}'} "
        f"vocab={vocab.size} checkpoint={args.out}\n"
    )
    return EXIT_OK


def cmd_finetune(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    corpus = parse_corpus_file(args.train)
    cfg = FineTuneConfig(
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
        mode=args.mode,
        seed=args.seed,
    )
    tuned, records = fine_tune_dating(ck.model, ck.vocab, corpus, cfg)
    stage_meta = dict(ck.stage_meta)
    stage_meta["finetune"] = {
        "mode": cfg.mode,
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "steps": len(records),
    }
    save_checkpoint(args.out, tuned, ck.vocab, stage_meta)
    if args.log:
        write_train_log(records, args.log)
    sys.stdout.write(
        f"mode={cfg.mode} steps={len(records)} "
        f"final_loss={records[-1]['loss']:.4f} checkpoint={args.out}\n"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    test = parse_corpus_file(args.test)
    if args.task == "restoration":
        net = build_families(parse_pair_file(args.pairs)) if args.pairs else GlyphNet(families=())
        try:
            ks = tuple(int(k) for k in args.ks.split(","))
        except ValueError as exc:
            raise UsageError(f"--ks must be comma-separated integers: {exc}") from exc
        train = parse_corpus_file(args.train) if args.train else None
        _, report = restoration_eval(ck.model, ck.vocab, net, test, ks=ks, train_corpus=train)
    else:
        _, report = dating_eval(ck.model, ck.vocab, test)
    if args.out:
        write_report(report, args.out, fmt="structured")
    sys.stdout.write(
        render_text_report(report) if args.format == "text" else report_to_json(report)
    )
    return EXIT_OK


def _render_candidates_text(candidates: list[dict]) -> list[str]:
    lines = []
    for cs in candidates:
        lines.append(f"position {cs['position']}:")
        for c in cs["entries"]:
            fam = "singleton" if c["family_id"] is None else f"family {c['family_id']}"
            lines.append(f"  {c['form']}  {c['score']:.4f}  ({fam})")
    return lines


def cmd_restore(args) -> int:
    tokens = parse_text(args.text)
    query_masks = [
        i
        for i, t in enumerate(tokens)
        if t.kind.name == "UNREADABLE"
        or (args.include_undeciphered and t.kind.name == "UNDECIPHERED")
    ]
    if not query_masks:
        raise UsageError(
            "text has no positions to restore (no damaged cells"
            + ("" if args.include_undeciphered else "; pass --include-undeciphered to target {UNK:n} cells")
            + ")"
        )
    ck = load_checkpoint(args.checkpoint)
    net = build_families(parse_pair_file(args.pairs)) if args.pairs else GlyphNet(families=())
    query = query_from_text(args.text, k=args.k, include_undeciphered=args.include_undeciphered)
    payload: dict = {
        "schema_version": 1,
        "task": "restore",
        "mode": args.mode,
        "text": args.text,
        "k": args.k,
        "mask_positions": list(query.mask_positions),
    }
    if args.mode == "parallel":
        sets = restore_parallel(ck.model, ck.vocab, net, query)
        payload["candidates"] = candidate_sets_payload(sets)
    else:
        result = restore_greedy(ck.model, ck.vocab, net, query)
        payload["final_text"] = "".join(t.text for t in result.tokens)
        payload["committed"] = [
            {"position": pos, "form": form} for pos, form in result.committed
        ]
        payload["steps"] = candidate_sets_payload(result.steps)

    def render(p: dict) -> str:
        lines = [f"mode: {p['mode']}  masks: {p['mask_positions']}"]
        if p["mode"] == "parallel":
            lines += _render_candidates_text(p["candidates"])
        else:
            lines.append(f"restored: {p['final_text']}")
            lines.append(
                "commits: "
                + ", ".join(f"{c['position']}→{c['form']}" for c in p["committed"])
            )
            lines += _render_candidates_text(p["steps"])
        return "\n".join(lines) + "\n"

    _emit(payload, args.format, args.out, render)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = json.loads(Path(args.in_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"report file is not valid JSON: {exc}") from exc
    text = render_text_report(report) if args.format == "text" else report_to_json(report)
    sys.stdout.write(text)
    if args.out:
        write_atomic(args.out, text)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.checkpoint, args.pairs, session_log=args.session_log)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glyphmlm",
        description="Allograph-aware masked modeling for fragmentary inscriptions.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("prep", help="parse, patch, audit, and filter a corpus")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--no-dedup", action="store_true")
    p.add_argument("--patch")
    p.add_argument("--kind", choices=("inscriptional", "auxiliary"), default="inscriptional")
    p.add_argument("--report")
    p.add_argument("--format", choices=("text", "structured"), default="text")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("glyphnet", help="build allograph families from a pair file")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=("text", "structured"), default="text")
    p.set_defaults(func=cmd_glyphnet)

    p = sub.add_parser("train", help="run an adaptation schedule from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--tapt", required=True, help="target-domain corpus file")
    p.add_argument("--dapt", help="auxiliary corpus file for the broad stage")
    p.add_argument("--pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune dating heads on labeled data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--mode", choices=("head", "full"), default="head")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--task", choices=("restoration", "dating"), required=True)
    p.add_argument("--pairs")
    p.add_argument("--train", help="training corpus for the unseen-gold filter")
    p.add_argument("--ks", default="1,5,10")
    p.add_argument("--out")
    p.add_argument("--format", choices=("text", "structured"), default="text")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("restore", help="propose restorations for damaged text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs")
    p.add_argument("--text", required=True)
    p.add_argument("--mode", choices=("parallel", "greedy"), default="parallel")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--include-undeciphered", action="store_true")
    p.add_argument("--out")
    p.add_argument("--format", choices=("text", "structured"), default="text")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("report", help="re-render a structured report")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=("text", "structured"), default="text")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="serve the restoration/dating HTTP API")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs")
    p.add_argument("--port", type=int, default=8077)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--session-log")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusFormatError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: missing file: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
