"""End-to-end command-line tests, run in-process against the fixture corpus."""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest
import torch

from glyphmlm.cli import main
from glyphmlm.checkpoint import load_checkpoint
from glyphmlm.corpus import (
    Corpus,
    Inscription,
    Token,
    audit,
    parse_corpus_file,
    write_corpus,
)
from glyphmlm.encoder import init_model
from glyphmlm.trainer import RunConfig

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
CORPUS = str(FIXTURES / "corpus_fixture.jsonl")
PAIRS = str(FIXTURES / "pairs_fixture.tsv")
PATCHES = str(FIXTURES / "patches_fixture.jsonl")


def toy_run_config(**kw) -> RunConfig:
    base = dict(
        schedule="tapt_only",
        stride=1,
        mlm_prob=0.2,
        batch_size=16,
        lr=3e-3,
        tapt_epochs=2,
        dim=16,
        layers=2,
        heads=2,
        ff_dim=32,
        max_seq=16,
        attn_dropout=0.0,
        hidden_dropout=0.0,
        seed=7,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Prepped corpus, a small training slice, a config, and a trained model."""
    root = tmp_path_factory.mktemp("cliws")
    prepped = root / "prepped.jsonl"
    assert main(["prep", "--in", CORPUS, "--out", str(prepped)]) == 0
    corpus = parse_corpus_file(prepped)
    rows = list(corpus.inscriptions[:30])
    rows.append(
        Inscription(
            id="zzunk",
            tokens=tuple(rows[0].tokens[:4]) + (Token.undeciphered(5),),
            dynasty="Shang",
        )
    )
    train_path = root / "train.jsonl"
    write_corpus(Corpus(inscriptions=tuple(rows)), train_path)
    config_path = root / "run.json"
    config_path.write_text(toy_run_config().to_json(), encoding="utf-8")
    ckpt = root / "model.ckpt"
    log = root / "train.log.jsonl"
    rc = main(
        [
            "train",
            "--config",
            str(config_path),
            "--tapt",
            str(train_path),
            "--pairs",
            PAIRS,
            "--out",
            str(ckpt),
            "--log",
            str(log),
        ]
    )
    assert rc == 0
    return {
        "root": root,
        "prepped": prepped,
        "train": train_path,
        "config": config_path,
        "ckpt": ckpt,
        "log": log,
    }


# ---------------------------------------------------------------------------
# prep


def test_prep_audit_matches_library(tmp_path, capsys):
    out = tmp_path / "prepped.jsonl"
    report = tmp_path / "prep.json"
    rc = main(
        [
            "prep",
            "--in",
            CORPUS,
            "--out",
            str(out),
            "--report",
            str(report),
            "--format",
            "structured",
        ]
    )
    assert rc == 0
    payload = json.loads(report.read_text(encoding="utf-8"))
    raw = parse_corpus_file(CORPUS)
    assert payload["input"] == audit(raw).to_dict()
    golden = json.loads((FIXTURES / "golden_audit.json").read_text(encoding="utf-8"))
    assert payload["filter"]["kept"] == golden["filter"]["kept"]
    assert len(parse_corpus_file(out).inscriptions) == golden["filter"]["kept"]
    stdout = capsys.readouterr().out
    assert json.loads(stdout) == payload


def test_prep_text_format_shows_share_table(tmp_path, capsys):
    rc = main(["prep", "--in", CORPUS, "--out", str(tmp_path / "p.jsonl")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "identifiable" in out and "share %" in out and "filter:" in out


def test_prep_min_len_monotone(tmp_path):
    kept = {}
    for n in (2, 6):
        out = tmp_path / f"p{n}.jsonl"
        assert main(["prep", "--in", CORPUS, "--out", str(out), "--min-len", str(n)]) == 0
        kept[n] = len(parse_corpus_file(out).inscriptions)
    assert kept[2] >= kept[6]


def test_prep_applies_patches(tmp_path):
    out = tmp_path / "patched.jsonl"
    rc = main(["prep", "--in", CORPUS, "--out", str(out), "--patch", PATCHES])
    assert rc == 0
    patched = {i.id: i for i in parse_corpus_file(out).inscriptions}
    patches = [json.loads(line) for line in Path(PATCHES).read_text().splitlines()]
    for p in patches:
        if p["field"] == "dynasty":
            assert patched[p["id"]].dynasty == p["new"]
        elif p["field"] == "text":
            assert patched[p["id"]].text == p["new"]


def test_prep_malformed_input_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "text": "甲乙", "bogus": 1}\n', encoding="utf-8")
    rc = main(["prep", "--in", str(bad), "--out", str(tmp_path / "o.jsonl")])
    assert rc == 2
    assert "data error" in capsys.readouterr().err


def test_missing_input_file_is_data_error(tmp_path):
    rc = main(["prep", "--in", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_unknown_flag_is_usage_error(tmp_path):
    assert main(["prep", "--in", CORPUS, "--out", str(tmp_path / "o"), "--whatever"]) == 1


def test_unknown_subcommand_is_usage_error():
    assert main(["frobnicate"]) == 1


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "subcommand" in capsys.readouterr().out or True


# ---------------------------------------------------------------------------
# glyphnet


def test_glyphnet_matches_library(tmp_path, capsys):
    from glyphmlm.glyphnet import build_families, parse_pair_file

    out = tmp_path / "families.json"
    rc = main(["glyphnet", "--pairs", PAIRS, "--out", str(out), "--format", "structured"])
    assert rc == 0
    payload = json.loads(out.read_text(encoding="utf-8"))
    net = build_families(parse_pair_file(PAIRS))
    assert payload["families"] == json.loads(json.dumps(net.to_dict()))
    assert payload["stats"]["n_families"] == len(net.families)


# ---------------------------------------------------------------------------
# train


def test_baseline_checkpoint_equals_init(ws, tmp_path):
    cfg_path = tmp_path / "baseline.json"
    cfg = toy_run_config(schedule="baseline")
    cfg_path.write_text(cfg.to_json(), encoding="utf-8")
    out = tmp_path / "baseline.ckpt"
    rc = main(
        [
            "train",
            "--config",
            str(cfg_path),
            "--tapt",
            str(ws["train"]),
            "--pairs",
            PAIRS,
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    ck = load_checkpoint(out)
    init = init_model(cfg.encoder_config(ck.vocab.size), cfg.seed)
    for (n, p), (_, q) in zip(ck.model.named_parameters(), init.named_parameters()):
        assert torch.equal(p, q), n


def test_train_twice_identical_logs_and_params(ws, tmp_path):
    outs, logs = [], []
    for i in range(2):
        out = tmp_path / f"m{i}.ckpt"
        log = tmp_path / f"l{i}.jsonl"
        rc = main(
            [
                "train",
                "--config",
                str(ws["config"]),
                "--tapt",
                str(ws["train"]),
                "--pairs",
                PAIRS,
                "--out",
                str(out),
                "--log",
                str(log),
            ]
        )
        assert rc == 0
        outs.append(out)
        logs.append(log)
    assert logs[0].read_bytes() == logs[1].read_bytes()
    a, b = load_checkpoint(outs[0]), load_checkpoint(outs[1])
    for (n, p), (_, q) in zip(a.model.named_parameters(), b.model.named_parameters()):
        assert torch.equal(p, q), n


def test_seed_flag_overrides_config(ws, tmp_path):
    out1 = tmp_path / "s1.ckpt"
    out2 = tmp_path / "s2.ckpt"
    for out, seed in ((out1, "1"), (out2, "2")):
        rc = main(
            [
                "train",
                "--config",
                str(ws["config"]),
                "--tapt",
                str(ws["train"]),
                "--out",
                str(out),
                "--seed",
                seed,
            ]
        )
        assert rc == 0
    a, b = load_checkpoint(out1), load_checkpoint(out2)
    assert any(
        not torch.equal(p, q)
        for (_, p), (_, q) in zip(a.model.named_parameters(), b.model.named_parameters())
    )
    assert a.stage_meta["seed"] == 1 and b.stage_meta["seed"] == 2


def test_divergent_training_exits_numeric(ws, tmp_path, capsys):
    cfg_path = tmp_path / "diverge.json"
    cfg_path.write_text(toy_run_config(lr=1e6, tapt_epochs=3).to_json(), encoding="utf-8")
    rc = main(
        [
            "train",
            "--config",
            str(cfg_path),
            "--tapt",
            str(ws["train"]),
            "--out",
            str(tmp_path / "d.ckpt"),
        ]
    )
    assert rc == 3
    assert "numeric failure" in capsys.readouterr().err


def test_bad_config_is_data_error(ws, tmp_path):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text('{"schedule": "tapt_only", "unknown_knob": 1}', encoding="utf-8")
    rc = main(
        [
            "train",
            "--config",
            str(cfg_path),
            "--tapt",
            str(ws["train"]),
            "--out",
            str(tmp_path / "x.ckpt"),
        ]
    )
    assert rc == 2


def test_config_dir_env_fallback(ws, tmp_path, monkeypatch):
    cfgdir = tmp_path / "configs"
    cfgdir.mkdir()
    (cfgdir / "byname.json").write_text(
        toy_run_config(schedule="baseline").to_json(), encoding="utf-8"
    )
    monkeypatch.setenv("GLYPHMLM_CONFIG_DIR", str(cfgdir))
    rc = main(
        [
            "train",
            "--config",
            "byname.json",
            "--tapt",
            str(ws["train"]),
            "--out",
            str(tmp_path / "env.ckpt"),
        ]
    )
    assert rc == 0


# ---------------------------------------------------------------------------
# finetune


def test_finetune_head_mode(ws, tmp_path):
    out = tmp_path / "tuned.ckpt"
    rc = main(
        [
            "finetune",
            "--checkpoint",
            str(ws["ckpt"]),
            "--train",
            str(ws["train"]),
            "--out",
            str(out),
            "--epochs",
            "3",
            "--lr",
            "0.01",
        ]
    )
    assert rc == 0
    base = load_checkpoint(ws["ckpt"])
    tuned = load_checkpoint(out)
    assert tuned.stage_meta["finetune"]["mode"] == "head"
    for (n, p), (_, q) in zip(
        base.model.named_parameters(), tuned.model.named_parameters()
    ):
        if n.startswith(("dynasty_head", "period_head")):
            assert not torch.equal(p, q), n
        else:
            assert torch.equal(p, q), n


# ---------------------------------------------------------------------------
# eval


def test_eval_restoration_matches_library(ws, tmp_path, capsys):
    from glyphmlm.evaluation import report_to_json, restoration_eval
    from glyphmlm.glyphnet import build_families, parse_pair_file

    out = tmp_path / "resto.json"
    rc = main(
        [
            "eval",
            "--checkpoint",
            str(ws["ckpt"]),
            "--test",
            str(ws["train"]),
            "--pairs",
            PAIRS,
            "--task",
            "restoration",
            "--out",
            str(out),
            "--format",
            "structured",
        ]
    )
    assert rc == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    ck = load_checkpoint(ws["ckpt"])
    net = build_families(parse_pair_file(PAIRS))
    _, expected = restoration_eval(
        ck.model, ck.vocab, net, parse_corpus_file(ws["train"]), ks=(1, 5, 10)
    )
    assert out.read_text(encoding="utf-8") == report_to_json(expected)
    for k in ("1", "5", "10"):
        assert report["metrics"]["family"][k] >= report["metrics"]["exact"][k]
    assert report["metrics"]["exact"]["1"] <= report["metrics"]["exact"]["5"]
    assert report["metrics"]["exact"]["5"] <= report["metrics"]["exact"]["10"]


def test_eval_dating_schema_and_parity(ws, tmp_path):
    from glyphmlm.evaluation import dating_eval, report_to_json

    out = tmp_path / "dating.json"
    rc = main(
        [
            "eval",
            "--checkpoint",
            str(ws["ckpt"]),
            "--test",
            str(ws["train"]),
            "--task",
            "dating",
            "--out",
            str(out),
            "--format",
            "structured",
        ]
    )
    assert rc == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    hier = report["metrics"]["hierarchical"]
    assert set(hier) == {
        "acc_dyn",
        "f1_dyn",
        "acc_per",
        "f1_per",
        "period_total",
        "period_evaluated",
    }
    ck = load_checkpoint(ws["ckpt"])
    _, expected = dating_eval(ck.model, ck.vocab, parse_corpus_file(ws["train"]))
    assert out.read_text(encoding="utf-8") == report_to_json(expected)


def test_eval_bad_ks_is_usage_error(ws, tmp_path):
    rc = main(
        [
            "eval",
            "--checkpoint",
            str(ws["ckpt"]),
            "--test",
            str(ws["train"]),
            "--task",
            "restoration",
            "--ks",
            "1,five",
        ]
    )
    assert rc == 1


# ---------------------------------------------------------------------------
# restore


def _mask_text(ws) -> str:
    corpus = parse_corpus_file(ws["train"])
    base = [t.form for t in corpus.inscriptions[0].tokens if t.kind.name == "IDENTIFIABLE"]
    return "".join(base[:3]) + "□" + "".join(base[3:5]) + "□" + base[5]


def test_restore_no_mask_is_usage_error(ws, capsys):
    rc = main(
        ["restore", "--checkpoint", str(ws["ckpt"]), "--text", "甲乙丙丁"]
    )
    assert rc == 1
    assert "no positions to restore" in capsys.readouterr().err


def test_restore_parallel_candidates(ws, capsys):
    rc = main(
        [
            "restore",
            "--checkpoint",
            str(ws["ckpt"]),
            "--pairs",
            PAIRS,
            "--text",
            _mask_text(ws),
            "--k",
            "5",
            "--format",
            "structured",
        ]
    )
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["mode"] == "parallel"
    assert len(payload["candidates"]) == 2
    for cs in payload["candidates"]:
        assert len(cs["entries"]) == 5
        assert all("family_id" in c for c in cs["entries"])
        scores = [c["score"] for c in cs["entries"]]
        assert scores == sorted(scores, reverse=True)


def test_restore_greedy_matches_library(ws, capsys):
    from glyphmlm.decode import query_from_text, restore_greedy
    from glyphmlm.glyphnet import build_families, parse_pair_file

    text = _mask_text(ws)
    rc = main(
        [
            "restore",
            "--checkpoint",
            str(ws["ckpt"]),
            "--pairs",
            PAIRS,
            "--text",
            text,
            "--mode",
            "greedy",
            "--k",
            "5",
            "--format",
            "structured",
        ]
    )
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    ck = load_checkpoint(ws["ckpt"])
    net = build_families(parse_pair_file(PAIRS))
    expected = restore_greedy(ck.model, ck.vocab, net, query_from_text(text, k=5))
    assert payload["final_text"] == "".join(t.text for t in expected.tokens)
    assert [(c["position"], c["form"]) for c in payload["committed"]] == list(
        expected.committed
    )
    assert "□" not in payload["final_text"]


def test_restore_text_format(ws, capsys):
    rc = main(
        [
            "restore",
            "--checkpoint",
            str(ws["ckpt"]),
            "--pairs",
            PAIRS,
            "--text",
            _mask_text(ws),
            "--k",
            "3",
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "position" in out and "family" in out


# ---------------------------------------------------------------------------
# report


def test_report_renders_text_from_structured(ws, tmp_path, capsys):
    out = tmp_path / "resto.json"
    main(
        [
            "eval",
            "--checkpoint",
            str(ws["ckpt"]),
            "--test",
            str(ws["train"]),
            "--pairs",
            PAIRS,
            "--task",
            "restoration",
            "--out",
            str(out),
            "--format",
            "structured",
        ]
    )
    capsys.readouterr()
    rc = main(["report", "--in", str(out), "--format", "text"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "E@1" in text and "F@10" in text


# ---------------------------------------------------------------------------
# pipeline determinism (prep -> train -> eval, twice)


def test_pipeline_reports_byte_identical(tmp_path):
    reports = []
    for run_dir in ("a", "b"):
        d = tmp_path / run_dir
        d.mkdir()
        prepped = d / "prepped.jsonl"
        assert main(["prep", "--in", CORPUS, "--out", str(prepped)]) == 0
        small = Corpus(inscriptions=parse_corpus_file(prepped).inscriptions[:20])
        train = d / "train.jsonl"
        write_corpus(small, train)
        cfg = d / "run.json"
        cfg.write_text(toy_run_config(tapt_epochs=1).to_json(), encoding="utf-8")
        ckpt = d / "m.ckpt"
        assert (
            main(
                [
                    "train",
                    "--config",
                    str(cfg),
                    "--tapt",
                    str(train),
                    "--pairs",
                    PAIRS,
                    "--out",
                    str(ckpt),
                ]
            )
            == 0
        )
        report = d / "report.json"
        assert (
            main(
                [
                    "eval",
                    "--checkpoint",
                    str(ckpt),
                    "--test",
                    str(train),
                    "--pairs",
                    PAIRS,
                    "--task",
                    "restoration",
                    "--out",
                    str(report),
                ]
            )
            == 0
        )
        reports.append(report.read_bytes())
    assert reports[0] == reports[1]


# ---------------------------------------------------------------------------
# module executability


def test_module_invocation_smoke():
    proc = subprocess.run(
        [sys.executable, "-m", "glyphmlm.cli", "--help"],
        capture_output=True,
        text=True,
        cwd=str(ROOT),
    )
    assert proc.returncode == 0
    assert "prep" in proc.stdout and "serve" in proc.stdout
