"""HTTP service exposing corpora, sessions, models, provenance, documents.

Every state the UI can reach is reachable through these endpoints alone.
Turns run synchronously within the POST; GET /sessions/{id}/status supports
polling from other clients, and a second message during an in-flight turn
is rejected with 409. Sessions survive restarts: state lives in the
workspace database and is lazily reloaded.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .conductor import Conductor, PlannerConfig, Session
from .db import DBService
from .errors import (
    DuplicateDatasetId,
    DuplicateTableId,
    MissingInput,
    ProviderUnavailable,
    TableNotFound,
    TableScoutError,
    UnreadableFile,
)
from .harness import build_runtime
from .llm import LMService, ScriptedProvider
from .provenance import derivation_script
from .retriever import Retriever

SAMPLE_ROWS_PER_VIEW = 5


@dataclass
class ApiConfig:
    corpus_root: str
    host: str = "127.0.0.1"
    port: int = 8640
    auth_token: str | None = None
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    @classmethod
    def from_env(cls) -> "ApiConfig":
        root = os.environ.get("TABLESCOUT_CORPUS", "./corpus")
        return cls(
            corpus_root=root,
            host=os.environ.get("TABLESCOUT_HOST", "127.0.0.1"),
            port=int(os.environ.get("TABLESCOUT_PORT", "8640")),
            auth_token=os.environ.get("TABLESCOUT_TOKEN") or None,
        )


class EngineState:
    """Process-wide runtime: the shared DB service plus per-session runtimes."""

    def __init__(self, config: ApiConfig):
        self.config = config
        self.db = DBService(config.corpus_root)
        self.sessions: dict[str, tuple[Session, Conductor]] = {}
        self.lock = threading.Lock()

    def get_session(self, session_id: str) -> tuple[Session, Conductor]:
        with self.lock:
            if session_id in self.sessions:
                return self.sessions[session_id]
        state = self.db.load_session_state(session_id, session_id)
        if state is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        session = Session.from_state(state)
        lm = LMService(ScriptedProvider())  # restored sessions reply only via a live provider
        dataset = session.workspace.attached_sources[0] if session.workspace.attached_sources else None
        retriever = Retriever(self.db, lm, dataset_id=dataset)
        retriever.load_index()
        conductor = Conductor(self.db, lm, retriever, self.config.planner)
        with self.lock:
            self.sessions.setdefault(session_id, (session, conductor))
            return self.sessions[session_id]


def create_app(config: ApiConfig | None = None) -> FastAPI:
    config = config or ApiConfig.from_env()
    engine = EngineState(config)
    app = FastAPI(title="tablescout", version="0.1.0")
    app.state.engine = engine

    def check_auth(request: Request):
        if config.auth_token:
            header = request.headers.get("authorization", "")
            if header != f"Bearer {config.auth_token}":
                raise HTTPException(status_code=401, detail="missing or invalid token")

    auth = Depends(check_auth)

    @app.exception_handler(TableScoutError)
    async def _engine_error(request: Request, exc: TableScoutError):
        status = 400
        if isinstance(exc, (TableNotFound,)):
            status = 404
        elif isinstance(exc, (DuplicateDatasetId, DuplicateTableId)):
            status = 409
        elif isinstance(exc, ProviderUnavailable):
            status = 503
        return JSONResponse(
            status_code=status, content={"error": exc.code, "message": str(exc)}
        )

    # --- corpora ---------------------------------------------------------

    @app.post("/corpora", dependencies=[auth])
    def register_corpus(body: dict):
        path = body.get("path")
        dataset_id = body.get("dataset_id")
        if not path or not dataset_id:
            raise HTTPException(status_code=400, detail="path and dataset_id are required")
        if not Path(path).exists():
            raise UnreadableFile(f"path does not exist: {path}")
        refs = engine.db.ingest_dataset(path, dataset_id)
        return {"dataset_id": dataset_id, "tables": [r.to_dict() for r in refs]}

    @app.post("/corpora/{dataset_id}/index", dependencies=[auth])
    def build_index(dataset_id: str):
        if dataset_id not in engine.db.list_datasets():
            raise HTTPException(status_code=404, detail=f"unknown dataset {dataset_id}")
        lm = LMService(ScriptedProvider())
        retriever = Retriever(engine.db, lm, dataset_id=dataset_id)
        idx = retriever.build_index()
        return {
            "status": "indexed",
            "tables": len(idx.summaries),
            "degraded": idx.degraded,
        }

    @app.get("/corpora", dependencies=[auth])
    def list_corpora():
        return {
            ds: [r.to_dict() for r in engine.db.list_tables(ds)]
            for ds in engine.db.list_datasets()
        }

    # --- sessions ----------------------------------------------------------

    @app.post("/sessions", dependencies=[auth])
    def create_session(body: dict):
        dataset = body.get("dataset")
        if not dataset or dataset not in engine.db.list_datasets():
            raise HTTPException(status_code=404, detail=f"unknown dataset {dataset!r}")
        session, conductor = build_runtime(
            engine.db,
            dataset,
            replies=body.get("replies"),
            direct_synthesis=bool(body.get("direct_synthesis", False)),
            planner=config.planner,
        )
        with engine.lock:
            engine.sessions[session.session_id] = (session, conductor)
        conductor.persist(session)
        return {
            "session_id": session.session_id,
            "workspace": session.workspace.to_dict(),
        }

    @app.post("/sessions/{session_id}/messages", dependencies=[auth])
    def post_message(session_id: str, body: dict):
        text = body.get("text", "")
        if not text:
            raise HTTPException(status_code=400, detail="text is required")
        session, conductor = engine.get_session(session_id)
        with engine.lock:
            if session.in_flight:
                raise HTTPException(status_code=409, detail="a turn is already in flight")
            session.in_flight = True
        try:
            reply = conductor.handle_message(session, text)
        finally:
            session.in_flight = False
        doc = session.latest_document()
        return {
            "reply": reply,
            "revision": session.model.revision,
            "document_ref": f"/sessions/{session_id}/document" if doc else None,
            "pending_question": session.pending_question,
        }

    @app.get("/sessions/{session_id}/status", dependencies=[auth])
    def session_status(session_id: str):
        session, _ = engine.get_session(session_id)
        return {
            "session_id": session_id,
            "in_flight": session.in_flight,
            "turn_count": session.turn_count,
            "revision": session.model.revision,
        }

    @app.get("/sessions/{session_id}/model", dependencies=[auth])
    def get_model(session_id: str, revision: int | None = None):
        session, _ = engine.get_session(session_id)
        model = session.model if revision is None else session.model_at(revision)
        if model is None:
            raise HTTPException(status_code=404, detail=f"no revision {revision}")
        samples = {}
        for view in model.views:
            if view.status == "materialized" and view.materialized_ref:
                try:
                    rel = engine.db.sample_rows(
                        view.materialized_ref, SAMPLE_ROWS_PER_VIEW, ws=session.workspace
                    )
                    samples[view.view_id] = rel.to_dict()
                except TableScoutError:
                    pass
        return {"model": model.to_dict(), "samples": samples}

    @app.get("/sessions/{session_id}/provenance", dependencies=[auth])
    def get_provenance(session_id: str):
        session, _ = engine.get_session(session_id)
        return session.provenance.to_dict()

    @app.get("/sessions/{session_id}/provenance/script", dependencies=[auth])
    def get_script(session_id: str):
        session, conductor = engine.get_session(session_id)
        try:
            s = conductor.executed_transformation(session)
        except MissingInput:
            raise HTTPException(status_code=404, detail="the model has no transformation yet")
        return PlainTextResponse(derivation_script(session.provenance, s))

    @app.get("/sessions/{session_id}/document", dependencies=[auth])
    def get_document(session_id: str):
        session, _ = engine.get_session(session_id)
        doc = session.latest_document()
        if doc is None:
            raise HTTPException(status_code=404, detail="no document produced yet")
        return doc.to_dict()

    @app.get("/sessions/{session_id}/transcript", dependencies=[auth])
    def get_transcript(session_id: str):
        session, _ = engine.get_session(session_id)
        return {"transcript": session.transcript}

    @app.get("/sessions/{session_id}/usage", dependencies=[auth])
    def get_usage(session_id: str):
        session, conductor = engine.get_session(session_id)
        return conductor.usage_totals(session).to_dict()

    return app


def serve(config: ApiConfig | None = None) -> None:
    import uvicorn

    config = config or ApiConfig.from_env()
    uvicorn.run(create_app(config), host=config.host, port=config.port)
