"""Headless session running, trace files, and the evaluation harness.

A trace file freezes a session: the scripted replies (consumed FIFO), the
dataset, and optionally the recorded document for replay diffing. The eval
harness runs question/expected-answer suites, scoring scalars by exact
match after numeric rounding normalization and sets by F1, and reports the
LLM vs non-LLM runtime split per question.
"""

from __future__ import annotations

import csv
import io
import json
import re
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .conductor import Conductor, PlannerConfig, Session
from .db import DBService
from .errors import ProviderUnavailable
from .llm import HttpChatProvider, LMService, ScriptedProvider
from .model import Document, InformationNeed
from .retriever import Retriever, RetrieverConfig


@dataclass
class TraceFile:
    dataset: str
    question: str = ""
    replies: list[dict] = field(default_factory=list)
    direct_synthesis: bool = False
    recorded: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "TraceFile":
        raw = Path(path).read_text()
        data = yaml.safe_load(raw)
        return cls(
            dataset=data["dataset"],
            question=data.get("question", ""),
            replies=list(data.get("replies", [])),
            direct_synthesis=bool(data.get("direct_synthesis", False)),
            recorded=data.get("recorded", {}) or {},
        )

    def dump(self, path: str | Path) -> None:
        payload = {
            "dataset": self.dataset,
            "question": self.question,
            "direct_synthesis": self.direct_synthesis,
            "replies": self.replies,
            "recorded": self.recorded,
        }
        Path(path).write_text(yaml.safe_dump(payload, sort_keys=False, width=100000))


@dataclass
class RunResult:
    reply: str
    session: Session
    conductor: Conductor
    answer: str | None
    total_time: float
    llm_time: float

    @property
    def non_llm_time(self) -> float:
        return max(self.total_time - self.llm_time, 0.0)


def build_runtime(
    db: DBService,
    dataset: str,
    replies: list[dict] | None = None,
    direct_synthesis: bool = False,
    planner: PlannerConfig | None = None,
    retriever_cfg: RetrieverConfig | None = None,
    session_id: str | None = None,
) -> tuple[Session, Conductor]:
    """Assemble a session with its own LM service and retriever."""
    if replies is not None:
        provider = ScriptedProvider()
        for r in replies:
            provider.push(r["content"], r.get("expect"))
    else:
        try:
            provider = HttpChatProvider()
        except ProviderUnavailable:
            # no live endpoint configured: the session still exists, messages
            # will surface ProviderUnavailable when a turn is attempted
            provider = ScriptedProvider()
    lm = LMService(provider)
    retriever = Retriever(db, lm, retriever_cfg, dataset_id=dataset)
    if retriever.load_index() is None:
        retriever.build_index()
    sid = session_id or f"s_{uuid.uuid4().hex[:12]}"
    ws = db.create_workspace(sid, attach=[dataset])
    session = Session(sid, ws, InformationNeed(text="", history=[]))
    cfg = planner or PlannerConfig()
    if direct_synthesis:
        cfg = PlannerConfig(c=cfg.c, m=cfg.m, direct_synthesis=True)
    return session, Conductor(db, lm, retriever, cfg)


def run_question(
    db: DBService,
    dataset: str,
    question: str,
    replies: list[dict] | None = None,
    direct_synthesis: bool = False,
    planner: PlannerConfig | None = None,
) -> RunResult:
    session, conductor = build_runtime(db, dataset, replies, direct_synthesis, planner)
    start = time.perf_counter()
    reply = conductor.handle_message(session, question)
    total = time.perf_counter() - start
    llm = conductor.usage_totals(session).wall_time
    return RunResult(
        reply=reply,
        session=session,
        conductor=conductor,
        answer=extract_answer(session),
        total_time=total,
        llm_time=llm,
    )


def extract_answer(session: Session) -> str | None:
    """The designated answer field of the terminal user_communicate action."""
    for entry in reversed(session.transcript):
        if entry.get("type") != "action":
            continue
        record = entry.get("record", {})
        if record.get("kind") == "user_communicate":
            ans = record.get("params", {}).get("answer")
            if ans is None:
                return None
            if isinstance(ans, list):
                return json.dumps(ans)
            return str(ans)
    return None


# --- answer scoring ---------------------------------------------------------

_ROUND_RE = re.compile(r"round(?:ed)?\s+(?:\w+\s+)*?to\s+(\d+)\s+decimal", re.IGNORECASE)


def stated_rounding(question: str) -> int | None:
    m = _ROUND_RE.search(question)
    return int(m.group(1)) if m else None


def normalize_answer(value, question: str = "") -> str:
    """Exact-match normalization: strip, then apply the question's stated
    numeric rounding when the value parses as a number."""
    s = str(value).strip()
    digits = stated_rounding(question)
    try:
        x = float(s.replace(",", ""))
    except ValueError:
        return s
    if digits is not None:
        return f"{round(x, digits):.{digits}f}"
    if x == int(x):
        return str(int(x))
    return repr(x)


def f1_score(expected: list, produced: list, question: str = "") -> float:
    exp = {normalize_answer(e, question) for e in expected}
    got = {normalize_answer(p, question) for p in produced}
    if not exp and not got:
        return 1.0
    if not got or not exp:
        return 0.0
    tp = len(exp & got)
    precision = tp / len(got)
    recall = tp / len(exp)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def score_answer(expected, produced: str | None, question: str = "") -> float:
    if produced is None:
        return 0.0
    if isinstance(expected, (list, tuple, set)):
        try:
            got = json.loads(produced)
            if not isinstance(got, list):
                got = [got]
        except (json.JSONDecodeError, TypeError):
            got = [p.strip() for p in str(produced).split(",")]
        return f1_score(list(expected), got, question)
    return 1.0 if normalize_answer(expected, question) == normalize_answer(produced, question) else 0.0


# --- the eval harness ---------------------------------------------------------


@dataclass
class EvalRow:
    question: str
    dataset: str
    expected: object
    answer: str | None
    score: float
    total_time: float
    llm_time: float
    non_llm_time: float
    input_tokens: int
    output_tokens: int
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "dataset": self.dataset,
            "expected": self.expected,
            "answer": self.answer,
            "score": self.score,
            "total_time": self.total_time,
            "llm_time": self.llm_time,
            "non_llm_time": self.non_llm_time,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "error": self.error,
        }


def run_suite(
    db: DBService, suite_path: str | Path, parallel: int = 1
) -> tuple[list[EvalRow], dict]:
    suite_path = Path(suite_path)
    spec = yaml.safe_load(suite_path.read_text())
    questions = spec["questions"] if isinstance(spec, dict) else spec

    def run_one(q: dict) -> EvalRow:
        replies = None
        direct = bool(q.get("direct_synthesis", False))
        if q.get("trace"):
            trace = TraceFile.load((suite_path.parent / q["trace"]).resolve())
            replies = trace.replies
            direct = direct or trace.direct_synthesis
        try:
            res = run_question(db, q["dataset"], q["question"], replies, direct)
            usage = res.conductor.usage_totals(res.session)
            return EvalRow(
                question=q["question"],
                dataset=q["dataset"],
                expected=q.get("expected"),
                answer=res.answer,
                score=score_answer(q.get("expected"), res.answer, q["question"]),
                total_time=res.total_time,
                llm_time=res.llm_time,
                non_llm_time=res.non_llm_time,
                input_tokens=usage.input_tokens,
                output_tokens=usage.output_tokens,
            )
        except Exception as e:  # a failed question scores 0, the suite goes on
            return EvalRow(
                question=q["question"],
                dataset=q.get("dataset", ""),
                expected=q.get("expected"),
                answer=None,
                score=0.0,
                total_time=0.0,
                llm_time=0.0,
                non_llm_time=0.0,
                input_tokens=0,
                output_tokens=0,
                error=f"{type(e).__name__}: {e}",
            )

    if parallel > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(run_one, questions))
    else:
        rows = [run_one(q) for q in questions]

    summary = {
        "questions": len(rows),
        "answer_quality": sum(r.score for r in rows) / len(rows) if rows else 0.0,
        "total_time": sum(r.total_time for r in rows),
        "llm_time": sum(r.llm_time for r in rows),
        "non_llm_time": sum(r.non_llm_time for r in rows),
    }
    return rows, summary


def write_results(rows: list[EvalRow], summary: dict, out_base: str | Path) -> tuple[Path, Path]:
    out_base = Path(out_base)
    json_path = out_base.with_suffix(".json")
    csv_path = out_base.with_suffix(".csv")
    json_path.write_text(
        json.dumps({"summary": summary, "results": [r.to_dict() for r in rows]}, indent=2)
    )
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].to_dict()) if rows else ["question"])
    writer.writeheader()
    for r in rows:
        d = r.to_dict()
        d["expected"] = json.dumps(d["expected"])
        writer.writerow(d)
    csv_path.write_text(buf.getvalue())
    return json_path, csv_path


def record_trace(trace: TraceFile, result: RunResult) -> TraceFile:
    doc = result.session.latest_document()
    trace.recorded = {
        "reply": result.reply,
        "document": doc.to_dict() if doc else None,
    }
    return trace


def diff_documents(a: dict | None, b: Document | None) -> list[str]:
    """Human-readable differences between a recorded and a replayed document."""
    problems: list[str] = []
    if a is None and b is None:
        return problems
    if a is None or b is None:
        return ["one run produced a document, the other did not"]
    rec = Document.from_dict(a)
    if [c.name for c in rec.schema] != [c.name for c in b.schema]:
        problems.append(
            f"schema differs: {[c.name for c in rec.schema]} vs {[c.name for c in b.schema]}"
        )
    from .replay import rows_multiset_equal

    if not rows_multiset_equal(rec.rows, b.rows):
        problems.append(f"rows differ: {len(rec.rows)} recorded vs {len(b.rows)} replayed")
    return problems
