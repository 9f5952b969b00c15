"""HTTP facade over restoration decoding, dating, and glyph families.

The application is built by :func:`create_app` around one immutable model
checkpoint loaded at startup. Pure endpoints (``/restore``, ``/date``,
``/families/{token}``) are safe for concurrent use and return identical
bytes across replays of the same request. Interactive restoration sessions
hold their state server-side: ``accept`` commits a form at a masked
position and returns refreshed candidates, ``undo`` pops the history stack
and returns the prior payload byte-for-byte. Sessions live in memory by
default; pass ``session_log`` to append every mutation to a JSONL file that
is replayed on the next startup.

Every payload, including errors, carries a ``schema_version`` field.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import torch
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, ConfigDict, Field

from .checkpoint import load_checkpoint
from .corpus import (
    BOS_IDX,
    EOS_IDX,
    DYNASTIES,
    PERIODS,
    CorpusFormatError,
    DataError,
    TokenKind,
    parse_text,
    read_lines,
)
from .decode import (
    RestorationQuery,
    candidate_sets_payload,
    restore_greedy,
    restore_step,
)
from .encoder import forward_classify, pad_batch
from .glyphnet import AllographPair, GlyphNet, build_families, parse_pair_file

SCHEMA_VERSION = 1


class ServiceError(Exception):
    """Request-level failure mapped straight to an HTTP status code."""

    def __init__(self, status_code: int, message: str):
        super().__init__(message)
        self.status_code = status_code
        self.message = message


def _canonical_json(payload: dict) -> str:
    return json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def _json_response(payload: dict, status_code: int = 200) -> Response:
    return Response(
        content=_canonical_json(payload),
        status_code=status_code,
        media_type="application/json",
    )


# ---------------------------------------------------------------------------
# request bodies


class RestoreRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    text: str
    mode: Literal["parallel", "greedy"] = "parallel"
    k: int = Field(default=10, ge=1)
    include_undeciphered: bool = False


class SessionCreateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    text: str
    k: int = Field(default=10, ge=1)
    include_undeciphered: bool = False


class AcceptRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    position: int
    form: str


class DateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    text: str


# ---------------------------------------------------------------------------
# session store


@dataclass
class _Session:
    session_id: str
    text: str
    k: int
    include_undeciphered: bool
    query: RestorationQuery
    accepted: dict[int, str] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    payload: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


class _AppState:
    def __init__(
        self,
        checkpoint_path: str | Path,
        pairs_path: str | Path | None,
        session_log: str | Path | None,
    ):
        ck = load_checkpoint(checkpoint_path)
        self.model = ck.model
        self.vocab = ck.vocab
        self.stage_meta = ck.stage_meta
        self.model.eval()
        self.pairs: tuple[AllographPair, ...] = (
            parse_pair_file(pairs_path) if pairs_path else ()
        )
        self.net: GlyphNet = (
            build_families(self.pairs) if self.pairs else GlyphNet(families=())
        )
        self.sessions: dict[str, _Session] = {}
        self.store_lock = threading.Lock()
        self.session_log = Path(session_log) if session_log else None
        if self.session_log is not None and self.session_log.exists():
            self._replay_log()

    # -- query construction ------------------------------------------------

    def build_query(self, text: str, k: int, include_undeciphered: bool) -> RestorationQuery:
        try:
            tokens = parse_text(text)
        except CorpusFormatError as exc:
            raise ServiceError(400, str(exc))
        mask_positions = tuple(
            i
            for i, tok in enumerate(tokens)
            if tok.kind is TokenKind.UNREADABLE
            or (include_undeciphered and tok.kind is TokenKind.UNDECIPHERED)
        )
        if not mask_positions:
            raise ServiceError(400, "text has no positions to restore")
        if len(tokens) + 2 > self.model.config.max_seq:
            raise ServiceError(
                413,
                f"sequence length {len(tokens) + 2} exceeds model maximum "
                f"{self.model.config.max_seq}",
            )
        mask_set = set(mask_positions)
        for i, tok in enumerate(tokens):
            if i in mask_set or tok.kind is TokenKind.UNREADABLE:
                continue
            try:
                self.vocab.encode_token(tok)
            except DataError as exc:
                raise ServiceError(422, str(exc))
        return RestorationQuery(tokens=tokens, mask_positions=mask_positions, k=k)

    # -- session payloads --------------------------------------------------

    def session_payload(self, s: _Session) -> dict:
        sets = restore_step(self.model, self.vocab, self.net, s.query, s.accepted)
        open_positions = [cs.position for cs in sets]
        current_text = "".join(
            s.accepted.get(i, tok.text) for i, tok in enumerate(s.query.tokens)
        )
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": s.session_id,
            "text": s.text,
            "k": s.k,
            "include_undeciphered": s.include_undeciphered,
            "mask_positions": list(s.query.mask_positions),
            "accepted": {str(p): f for p, f in sorted(s.accepted.items())},
            "open_positions": open_positions,
            "complete": not open_positions,
            "current_text": current_text,
            "candidates": candidate_sets_payload(sets),
        }

    def get_session(self, session_id: str) -> _Session:
        s = self.sessions.get(session_id)
        if s is None:
            raise ServiceError(404, f"unknown session {session_id!r}")
        return s

    # -- mutations (shared by HTTP handlers and log replay) -----------------

    def do_create(
        self, session_id: str, text: str, k: int, include_undeciphered: bool
    ) -> _Session:
        query = self.build_query(text, k, include_undeciphered)
        s = _Session(
            session_id=session_id,
            text=text,
            k=k,
            include_undeciphered=include_undeciphered,
            query=query,
        )
        s.payload = self.session_payload(s)
        with self.store_lock:
            self.sessions[session_id] = s
        return s

    def do_accept(self, s: _Session, position: int, form: str) -> dict:
        if position not in set(s.query.mask_positions):
            raise ServiceError(409, f"position {position} is not a masked position")
        if position in s.accepted:
            raise ServiceError(409, f"position {position} is already filled")
        idx = self.vocab.index.get(form)
        if idx is None or not self.vocab.is_form_index(idx):
            raise ServiceError(422, f"form {form!r} is not in the vocabulary")
        s.history.append(s.payload)
        s.accepted[position] = form
        s.payload = self.session_payload(s)
        return s.payload

    def do_undo(self, s: _Session) -> dict:
        if not s.history:
            raise ServiceError(409, "nothing to undo")
        s.payload = s.history.pop()
        s.accepted = {int(p): f for p, f in s.payload["accepted"].items()}
        return s.payload

    # -- persistence ---------------------------------------------------------

    def log_event(self, event: dict) -> None:
        if self.session_log is None:
            return
        with self.store_lock:
            with open(self.session_log, "a", encoding="utf-8") as fh:
                fh.write(_canonical_json(event) + "\n")

    def _replay_log(self) -> None:
        for lineno, line in enumerate(read_lines(self.session_log), start=1):
            if not line.strip():
                continue
            try:
                event = json.loads(line)
                kind = event["event"]
                if kind == "create":
                    self.do_create(
                        event["session_id"],
                        event["text"],
                        event["k"],
                        event["include_undeciphered"],
                    )
                elif kind == "accept":
                    s = self.get_session(event["session_id"])
                    self.do_accept(s, event["position"], event["form"])
                elif kind == "undo":
                    self.do_undo(self.get_session(event["session_id"]))
                else:
                    raise DataError(f"unknown event kind {kind!r}")
            except (KeyError, ValueError, ServiceError, DataError) as exc:
                raise DataError(
                    f"session log {self.session_log}: line {lineno}: cannot replay ({exc})"
                )


# ---------------------------------------------------------------------------
# application factory


def create_app(
    checkpoint_path: str | Path,
    pairs_path: str | Path | None = None,
    session_log: str | Path | None = None,
) -> FastAPI:
    state = _AppState(checkpoint_path, pairs_path, session_log)
    app = FastAPI(title="glyphmlm service", version=str(SCHEMA_VERSION))
    app.state.glyphmlm = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError) -> Response:
        return _json_response(
            {"schema_version": SCHEMA_VERSION, "error": exc.message}, exc.status_code
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError) -> Response:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err.get('loc', ()))}: {err.get('msg', '')}"
            for err in exc.errors()
        )
        return _json_response(
            {
                "schema_version": SCHEMA_VERSION,
                "error": f"malformed request body ({details})",
            },
            400,
        )

    @app.get("/health")
    def health() -> Response:
        return _json_response(
            {
                "schema_version": SCHEMA_VERSION,
                "status": "ok",
                "vocab_size": state.vocab.size,
                "n_families": len(state.net.families),
                "schedule": state.stage_meta.get("schedule"),
            }
        )

    @app.post("/restore")
    def restore(body: RestoreRequest) -> Response:
        query = state.build_query(body.text, body.k, body.include_undeciphered)
        payload: dict = {
            "schema_version": SCHEMA_VERSION,
            "mode": body.mode,
            "text": body.text,
            "k": body.k,
            "mask_positions": list(query.mask_positions),
        }
        if body.mode == "parallel":
            sets = restore_step(state.model, state.vocab, state.net, query, {})
            payload["candidates"] = candidate_sets_payload(sets)
        else:
            result = restore_greedy(state.model, state.vocab, state.net, query)
            payload["final_text"] = "".join(t.text for t in result.tokens)
            payload["committed"] = [
                {"position": pos, "form": form} for pos, form in result.committed
            ]
            payload["steps"] = candidate_sets_payload(result.steps)
        return _json_response(payload)

    @app.post("/sessions")
    def create_session(body: SessionCreateRequest) -> Response:
        session_id = uuid.uuid4().hex
        s = state.do_create(session_id, body.text, body.k, body.include_undeciphered)
        state.log_event(
            {
                "event": "create",
                "session_id": session_id,
                "text": body.text,
                "k": body.k,
                "include_undeciphered": body.include_undeciphered,
            }
        )
        return _json_response(s.payload, 201)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> Response:
        s = state.get_session(session_id)
        with s.lock:
            return _json_response(s.payload)

    @app.post("/sessions/{session_id}/accept")
    def accept(session_id: str, body: AcceptRequest) -> Response:
        s = state.get_session(session_id)
        with s.lock:
            payload = state.do_accept(s, body.position, body.form)
            state.log_event(
                {
                    "event": "accept",
                    "session_id": session_id,
                    "position": body.position,
                    "form": body.form,
                }
            )
            return _json_response(payload)

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str) -> Response:
        s = state.get_session(session_id)
        with s.lock:
            payload = state.do_undo(s)
            state.log_event({"event": "undo", "session_id": session_id})
            return _json_response(payload)

    @app.get("/families/{token}")
    def families(token: str) -> Response:
        fid = state.net.family_id(token)
        idx = state.vocab.index.get(token)
        known_form = idx is not None and state.vocab.is_form_index(idx)
        if fid is None and not known_form:
            raise ServiceError(404, f"unknown token {token!r}")
        members = state.net.family_of(token)
        member_set = set(members)
        pair_meta = [
            {
                "token_a": p.token_a,
                "token_b": p.token_b,
                "era": p.era,
                "source": p.source,
            }
            for p in state.pairs
            if p.token_a in member_set or p.token_b in member_set
        ]
        return _json_response(
            {
                "schema_version": SCHEMA_VERSION,
                "token": token,
                "family_id": fid,
                "members": list(members),
                "pairs": pair_meta,
            }
        )

    @app.post("/date")
    def date(body: DateRequest) -> Response:
        if not body.text.strip():
            raise ServiceError(400, "text is empty")
        try:
            tokens = parse_text(body.text)
        except CorpusFormatError as exc:
            raise ServiceError(400, str(exc))
        if len(tokens) + 2 > state.model.config.max_seq:
            raise ServiceError(
                413,
                f"sequence length {len(tokens) + 2} exceeds model maximum "
                f"{state.model.config.max_seq}",
            )
        try:
            ids = (
                [BOS_IDX]
                + [state.vocab.encode_token(t) for t in tokens]
                + [EOS_IDX]
            )
        except DataError as exc:
            raise ServiceError(422, str(exc))
        with torch.no_grad():
            batch, key_mask = pad_batch([ids])
            dyn = (
                forward_classify(state.model, batch, key_mask, "dynasty")
                .double()
                .exp()
                .numpy()[0]
            )
            per = (
                forward_classify(state.model, batch, key_mask, "period")
                .double()
                .exp()
                .numpy()[0]
            )
        return _json_response(
            {
                "schema_version": SCHEMA_VERSION,
                "text": body.text,
                "dynasty": {label: float(p) for label, p in zip(DYNASTIES, dyn)},
                "period": {label: float(p) for label, p in zip(PERIODS, per)},
                "pred_dynasty": DYNASTIES[int(dyn.argmax())],
                "pred_period": PERIODS[int(per.argmax())],
            }
        )

    return app
