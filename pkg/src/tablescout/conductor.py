"""Session-level planning loop.

Each user message runs a bounded loop: one situational analysis per
iteration proposes an action sequence (retrieve, enumerate, probe, edit the
target model, materialize, execute, communicate). Selecting user-facing
communication terminates the turn; hitting the budget forces a synthesis
that names the views still unmaterialized. A direct-synthesis mode disables
the target model entirely (used by the ablation harness)."""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field

from .db import DBService, Workspace
from .errors import (
    MissingInput,
    ProviderUnavailable,
    ScriptMismatch,
    SqlError,
    TableScoutError,
    ValidationFailed,
    ViewNotMaterialized,
)
from .llm import ChatMessage, ChatRequest, LMService, UsageRecord
from .materializer import Materializer, MaterializerTask
from .model import (
    MAX_MODEL_REVISIONS,
    ColumnSpec,
    Document,
    InformationNeed,
    TargetModel,
    TransformationS,
    ViewSpec,
    model_diff,
    validate_model,
)
from .planning import (
    ActionRecord,
    conductor_messages,
    forced_synthesis_messages,
    summarize_messages,
)
from .provenance import ProvenanceGraph
from .retriever import RetrievalQuery, RetrievalResult, Retriever
from .sandbox import run_script

ANSWER_PROMPT_ROW_CAP = 50


@dataclass
class PlannerConfig:
    c: int = 10
    m: int = 10
    direct_synthesis: bool = False

    def __post_init__(self):
        if self.c < 1 or self.m < 1:
            raise ValueError("iteration bounds must be >= 1")


_DIRECT_DISABLED = {"model_update", "materialize", "executor"}


@dataclass
class Session:
    session_id: str
    workspace: Workspace
    need: InformationNeed
    model: TargetModel = field(default_factory=TargetModel)
    model_history: list[TargetModel] = field(default_factory=list)
    documents: dict[int, Document] = field(default_factory=dict)
    provenance: ProvenanceGraph = field(default_factory=ProvenanceGraph)
    transcript: list[dict] = field(default_factory=list)
    shared_context: list[RetrievalResult] = field(default_factory=list)
    probe_notes: list[str] = field(default_factory=list)
    usage_base: UsageRecord = field(default_factory=UsageRecord)
    pending_question: bool = False
    turn_count: int = 0

    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    in_flight: bool = False

    def latest_document(self) -> Document | None:
        if not self.documents:
            return None
        return self.documents[max(self.documents)]

    def model_at(self, revision: int) -> TargetModel | None:
        if revision == self.model.revision:
            return self.model
        for m in self.model_history:
            if m.revision == revision:
                return m
        return None

    def to_state(self) -> dict:
        return {
            "session_id": self.session_id,
            "workspace": self.workspace.to_dict(),
            "need": self.need.to_dict(),
            "model": self.model.to_dict(),
            "model_history": [m.to_dict() for m in self.model_history],
            "documents": {str(k): d.to_dict() for k, d in self.documents.items()},
            "provenance": self.provenance.to_dict(),
            "transcript": self.transcript,
            "shared_context": [r.to_dict() for r in self.shared_context],
            "probe_notes": self.probe_notes,
            "usage": self.usage_base.to_dict(),
            "pending_question": self.pending_question,
            "turn_count": self.turn_count,
        }

    @classmethod
    def from_state(cls, state: dict) -> "Session":
        from .retriever import RankedTable

        ws = Workspace(**state["workspace"])
        s = cls(
            session_id=state["session_id"],
            workspace=ws,
            need=InformationNeed.from_dict(state["need"]),
            model=TargetModel.from_dict(state["model"]),
            model_history=[TargetModel.from_dict(m) for m in state.get("model_history", [])],
            documents={
                int(k): Document.from_dict(d) for k, d in state.get("documents", {}).items()
            },
            provenance=ProvenanceGraph.from_dict(state.get("provenance", {})),
            transcript=state.get("transcript", []),
            probe_notes=state.get("probe_notes", []),
            pending_question=state.get("pending_question", False),
            turn_count=state.get("turn_count", 0),
        )
        s.shared_context = [
            RetrievalResult(ranked=[RankedTable(**r) for r in rr.get("ranked", [])])
            for rr in state.get("shared_context", [])
        ]
        u = state.get("usage", {})
        s.usage_base = UsageRecord(
            input_tokens=u.get("input_tokens", 0),
            output_tokens=u.get("output_tokens", 0),
            wall_time=u.get("wall_time", 0.0),
        )
        return s


class Conductor:
    def __init__(
        self,
        db: DBService,
        lm: LMService,
        retriever: Retriever,
        cfg: PlannerConfig | None = None,
    ):
        self.db = db
        self.lm = lm
        self.retriever = retriever
        self.cfg = cfg or PlannerConfig()

    # --- session lifecycle -------------------------------------------------

    def usage_totals(self, session: Session) -> UsageRecord:
        total = UsageRecord()
        total.add(session.usage_base)
        total.add(self.lm.totals)
        return total

    def persist(self, session: Session) -> None:
        state = session.to_state()
        state["usage"] = self.usage_totals(session).to_dict()
        self.db.save_session_state(session.workspace, session.session_id, state)

    # --- the loop ------------------------------------------------------------

    def handle_message(self, session: Session, user_text: str) -> str:
        with session.lock:  # subsequent messages queue
            return self._handle(session, user_text)

    def _handle(self, session: Session, user_text: str) -> str:
        session.turn_count += 1
        turn = session.turn_count
        session.need.refine(user_text)
        session.pending_question = False
        session.transcript.append({"type": "user_message", "turn": turn, "text": user_text})

        records = [
            ActionRecord.from_dict(t["record"])
            for t in session.transcript
            if t.get("type") == "action"
        ]
        older_summary: str | None = None
        last_error: str | None = None

        reply: str | None = None
        for iteration in range(1, self.cfg.c + 1):
            if len(records) > 10 and older_summary is None:
                older_summary = self._summarize(records[:-10])
            plan = self._plan(session, records, older_summary, last_error, iteration)
            analysis = ActionRecord(
                kind="situational_analysis",
                outcome=plan.get("analysis", ""),
                iteration=iteration,
            )
            self._append(session, turn, records, analysis)
            last_error = None
            for action in plan.get("actions", []):
                kind = action.get("kind", "")
                if kind == "situational_analysis":
                    continue
                params = action.get("params", {})
                record = ActionRecord(kind=kind, params=params, iteration=iteration)
                entry = self._append(session, turn, records, record)
                try:
                    if self.cfg.direct_synthesis and kind in _DIRECT_DISABLED:
                        record.error = f"{kind} is disabled in direct-synthesis mode"
                        last_error = record.error
                        break
                    try:
                        outcome = self._execute(session, kind, params, record)
                    except ScriptMismatch:
                        raise  # scripted-trace drift is a hard failure, never recovery fodder
                    except TableScoutError as e:
                        record.error = str(e)
                        last_error = f"{kind}: {e}"
                        break
                    except (ValueError, KeyError, TypeError) as e:
                        record.error = f"{type(e).__name__}: {e}"
                        last_error = f"{kind}: {record.error}"
                        break
                    record.outcome = outcome if isinstance(outcome, str) else ""
                    if kind == "user_communicate":
                        reply = params.get("content", "")
                        if params.get("kind") == "question":
                            session.pending_question = True
                        break
                finally:
                    entry["record"] = record.to_dict()  # refresh outcome/error
            self.persist(session)  # a crash loses at most one iteration
            if reply is not None:
                break
        if reply is None:
            reply = self._forced_synthesis(session, records)
        session.transcript.append({"type": "assistant_reply", "turn": turn, "text": reply})
        self.persist(session)
        return reply

    def _append(
        self, session: Session, turn: int, records: list[ActionRecord], record: ActionRecord
    ) -> dict:
        records.append(record)
        entry = {"type": "action", "turn": turn, "record": record.to_dict()}
        session.transcript.append(entry)
        return entry

    def _plan(self, session, records, older_summary, last_error, iteration) -> dict:
        model_block = json.dumps(session.model.to_dict(), indent=1)
        messages = conductor_messages(
            session.need.text,
            model_block,
            records,
            older_summary,
            session.probe_notes,
            last_error,
            iteration,
            self.cfg.c,
            self.cfg.direct_synthesis,
        )
        return self.lm.complete(
            ChatRequest(messages=messages, response_format="structured", structure_schema="plan")
        ).parsed

    def _summarize(self, records: list[ActionRecord]) -> str:
        try:
            return self.lm.complete(ChatRequest(messages=summarize_messages(records))).text
        except ProviderUnavailable:
            return f"(summary unavailable; {len(records)} earlier actions)"

    def _forced_synthesis(self, session: Session, records: list[ActionRecord]) -> str:
        unmaterialized = sorted(
            v.view_id for v in session.model.views if v.status != "materialized"
        )
        messages = forced_synthesis_messages(
            session.need.text,
            json.dumps(session.model.to_dict(), indent=1),
            unmaterialized,
            records,
        )
        try:
            text = self.lm.complete(ChatRequest(messages=messages)).text
        except ProviderUnavailable:
            text = "The iteration budget was exhausted before an answer was produced."
        if unmaterialized:
            text += f"\n\n[unmaterialized views: {', '.join(unmaterialized)}]"
        return text

    # --- actions ---------------------------------------------------------------

    def _execute(self, session: Session, kind: str, params: dict, record: ActionRecord) -> str:
        if kind == "retrieve":
            queries = params.get("queries") or [params.get("text", "")]
            results = self.retriever.retrieve_many(
                [
                    RetrievalQuery(text=q, k=params.get("k", self.retriever.cfg.k))
                    for q in queries
                    if q
                ]
            )
            session.shared_context.extend(results)
            found = sorted({r.table_id for rr in results for r in rr.ranked})
            return f"retrieved: {', '.join(found)}"
        if kind == "enumerate":
            refs = self.retriever.enumerate(params["pattern"])
            return f"enumerated {len(refs)} tables: {', '.join(r.table_id for r in refs[:60])}"
        if kind == "context_extract":
            probes = [(p.get("purpose", "probe"), p["query"]) for p in params.get("probes", [])]
            outcomes = self.context_extract(session, probes)
            return " ; ".join(outcomes)
        if kind == "model_update":
            diff = self.model_update(session, params)
            return f"revision {session.model.revision}; diff: {json.dumps(diff)}"
        if kind == "materialize":
            return self._materialize(session, params.get("guidance"))
        if kind == "executor":
            doc = self.execute_S(session)
            return f"document with {len(doc.rows)} rows (revision {doc.produced_by})"
        if kind == "user_communicate":
            return params.get("content", "")
        raise ValueError(f"unknown conductor action kind {kind!r}")

    def context_extract(
        self, session: Session, probes: list[tuple[str, str]]
    ) -> list[str]:
        """Read-only probes, row_limit 50; SQL errors are captured as data."""
        outcomes: list[str] = []
        for purpose, query in probes:
            try:
                pr = self.db.execute_query(session.workspace, query, row_limit=50)
                shown = pr.relation.rows[:10]
                note = (
                    f"{purpose}: columns={pr.relation.columns} rows={shown}"
                    + (" (truncated)" if pr.truncated else "")
                )
            except SqlError as e:
                note = f"{purpose}: SQL ERROR {e}"
            session.probe_notes.append(note)
            outcomes.append(note)
        return outcomes

    def model_update(self, session: Session, edit: dict) -> dict:
        add = [_view_from_params(v) for v in edit.get("add_views", [])]
        modify = [_view_from_params(v) for v in edit.get("modify_views", [])]
        remove = list(edit.get("remove_views", []))
        s = None
        if edit.get("set_transformation"):
            s = TransformationS.from_dict(edit["set_transformation"])
        new_model = session.model.with_edit(
            add=add, remove=remove, modify=modify, transformation=s
        )
        violations = validate_model(new_model)
        if violations:
            raise ValidationFailed(violations)
        diff = model_diff(session.model, new_model)
        session.model_history.append(session.model)
        if len(session.model_history) > MAX_MODEL_REVISIONS:
            session.model_history.pop(0)
        session.model = new_model
        return diff

    def _materialize(self, session: Session, guidance: str | None) -> str:
        task = MaterializerTask(
            target=session.model,
            guidance=guidance,
            shared_context=list(session.shared_context),
        )
        mat = Materializer(
            self.db, self.lm, self.retriever, session.workspace, session.provenance
        )
        result = mat.materialize(task, m_max=self.cfg.m)
        changed = [
            v
            for v in result.views
            if (old := session.model.get_view(v.view_id)) and old.to_dict() != v.to_dict()
        ]
        if changed:
            session.model_history.append(session.model)
            if len(session.model_history) > MAX_MODEL_REVISIONS:
                session.model_history.pop(0)
            session.model = session.model.with_edit(modify=changed)
        status = "complete" if result.complete else f"incomplete ({result.error})"
        return (
            f"materializer ran {result.iterations} iteration(s), {status}; "
            + "; ".join(
                f"{v.view_id} -> {v.materialized_ref}"
                for v in result.views
                if v.status == "materialized"
            )
        )

    def execute_S(self, session: Session) -> Document:
        s = session.model.transformation
        if s is None:
            raise MissingInput("the target model has no transformation to execute")
        bindings: dict[str, str] = {}
        for vid in s.declared_inputs:
            view = session.model.get_view(vid)
            if view is None or view.status != "materialized" or not view.materialized_ref:
                raise ViewNotMaterialized(f"view {vid!r} is not materialized")
            bindings[vid] = view.materialized_ref
        body = _resolve_views(s.body, bindings)

        if s.kind == "script":
            outcome = run_script(self.db, session.workspace, body)
            relation = outcome.result
            if relation is None:
                from .db import Relation

                relation = Relation(columns=[], rows=[])
        else:
            relation = self.db.execute_query(session.workspace, body).relation

        schema = [
            ColumnSpec(
                name=c,
                declared_type=_infer_result_type(relation.rows, i),
                description=f"result column {c}",
            )
            for i, c in enumerate(relation.columns)
        ]
        doc = Document(
            rows=list(relation.rows),
            schema=schema,
            produced_by=session.model.revision,
        )
        doc.answer_text = self._synthesize_answer(session, doc)
        session.documents[session.model.revision] = doc  # latest per revision
        session.transcript.append(
            {
                "type": "action",
                "turn": session.turn_count,
                "record": ActionRecord(
                    kind="answer_synthesis",
                    outcome=(doc.answer_text or "")[:400],
                ).to_dict(),
            }
        )
        return doc

    def executed_transformation(self, session: Session) -> TransformationS:
        """The transformation with view references resolved to materialized
        tables — the exact text a derivation script replays."""
        s = session.model.transformation
        if s is None:
            raise MissingInput("the target model has no transformation to execute")
        bindings = {}
        for vid in s.declared_inputs:
            view = session.model.get_view(vid)
            if view and view.materialized_ref:
                bindings[vid] = view.materialized_ref
        return TransformationS(
            kind=s.kind,
            body=_resolve_views(s.body, bindings),
            declared_inputs=tuple(bindings.get(v, v) for v in s.declared_inputs),
        )

    def _synthesize_answer(self, session: Session, doc: Document) -> str:
        rows = doc.rows[:ANSWER_PROMPT_ROW_CAP]
        body = (
            f"Question: {session.need.text}\n\n"
            f"Result columns: {[c.name for c in doc.schema]}\n"
            f"Result rows ({len(doc.rows)} total, showing {len(rows)}):\n"
            + "\n".join(str(list(r)) for r in rows)
            + "\n\nState the answer to the question, grounded only in these rows."
        )
        try:
            return self.lm.complete(
                ChatRequest(
                    messages=[
                        ChatMessage("system", "Answer strictly from the result relation."),
                        ChatMessage("user", body),
                    ]
                )
            ).text
        except ProviderUnavailable:
            return f"Result relation with {len(doc.rows)} rows: {rows[:5]}"


def _view_from_params(v: dict) -> ViewSpec:
    if "columns" in v and v["columns"] and isinstance(v["columns"][0], dict):
        cols = tuple(ColumnSpec.from_dict(c) for c in v["columns"])
    else:
        cols = tuple(ColumnSpec(name=c, description=f"column {c}") for c in v.get("columns", []))
    return ViewSpec(
        view_id=v["view_id"],
        columns=cols,
        status=v.get("status", "declared"),
        materialized_ref=v.get("materialized_ref"),
    )


def _resolve_views(body: str, bindings: dict[str, str]) -> str:
    for vid, table in bindings.items():
        if vid != table:
            body = re.sub(rf"\b{re.escape(vid)}\b", table, body)
    return body


def _infer_result_type(rows: list[tuple], col: int) -> str:
    for r in rows:
        v = r[col]
        if v is None:
            continue
        if isinstance(v, bool):
            return "boolean"
        if isinstance(v, int):
            return "integer"
        if isinstance(v, float):
            return "real"
        return "text"
    return "text"
