"""Self-describing checkpoint container.

Layout: a zip archive with one ``meta.json`` entry followed by one
``params/<name>.npy`` entry per parameter tensor, in module order. The
meta record carries the format tag, schema version, encoder configuration,
tensor dtype, the full vocabulary (forms plus reserved count) with its
sha256 hash, the ordered parameter name list, and free-form training-stage
metadata. Loading rebuilds the model from the stored configuration and
verifies shapes and the vocabulary hash.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .corpus import DataError, Vocabulary
from .encoder import EncoderConfig, EncoderModel
from .fileio import write_atomic

FORMAT_TAG = "glyphmlm-checkpoint"
SCHEMA_VERSION = 1

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class Checkpoint:
    model: EncoderModel
    config: EncoderConfig
    vocab: Vocabulary
    stage_meta: dict


def save_checkpoint(
    path: str | Path, model: EncoderModel, vocab: Vocabulary, stage_meta: dict
) -> None:
    names = [n for n, _ in model.named_parameters()]
    dtype = str(next(model.parameters()).dtype).removeprefix("torch.")
    if dtype not in _DTYPES:
        raise DataError(f"unsupported checkpoint dtype {dtype}")
    meta = {
        "format": FORMAT_TAG,
        "schema_version": SCHEMA_VERSION,
        "config": asdict(model.config),
        "dtype": dtype,
        "vocab": {
            "forms": list(vocab.forms),
            "n_reserved": vocab.n_reserved,
            "hash": vocab.vocab_hash,
        },
        "params": names,
        "stage_meta": stage_meta,
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("meta.json", json.dumps(meta, ensure_ascii=False, indent=1))
        for name, p in model.named_parameters():
            arr_buf = io.BytesIO()
            np.save(arr_buf, p.detach().cpu().numpy())
            zf.writestr(f"params/{name}.npy", arr_buf.getvalue())
    write_atomic(path, buf.getvalue())


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    with zf:
        try:
            meta = json.loads(zf.read("meta.json").decode("utf-8"))
        except KeyError as exc:
            raise DataError(f"checkpoint {path} has no meta.json") from exc
        if meta.get("format") != FORMAT_TAG:
            raise DataError(f"not a recognized checkpoint: {path}")
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported checkpoint schema {meta.get('schema_version')}")
        vocab = Vocabulary(
            forms=tuple(meta["vocab"]["forms"]), n_reserved=meta["vocab"]["n_reserved"]
        )
        if vocab.vocab_hash != meta["vocab"]["hash"]:
            raise DataError("checkpoint vocabulary hash mismatch")
        config = EncoderConfig(**meta["config"])
        dtype = _DTYPES.get(meta["dtype"])
        if dtype is None:
            raise DataError(f"unsupported checkpoint dtype {meta['dtype']}")
        model = EncoderModel(config).to(dtype)
        stored = set(meta["params"])
        have = {n for n, _ in model.named_parameters()}
        if stored != have:
            raise DataError("checkpoint parameter names do not match the configuration")
        with torch.no_grad():
            for name, p in model.named_parameters():
                arr = np.load(io.BytesIO(zf.read(f"params/{name}.npy")))
                if tuple(arr.shape) != tuple(p.shape):
                    raise DataError(f"checkpoint tensor {name} has shape {arr.shape}")
                p.copy_(torch.from_numpy(arr))
        return Checkpoint(model=model, config=config, vocab=vocab, stage_meta=meta["stage_meta"])
