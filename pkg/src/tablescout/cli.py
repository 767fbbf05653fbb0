"""Operator CLI: ingestion, indexing, one-shot questions, trace replay,
the evaluation harness, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .api import ApiConfig, serve
from .db import DBService
from .errors import TableScoutError
from .harness import (
    TraceFile,
    diff_documents,
    record_trace,
    run_question,
    run_suite,
    write_results,
)
from .llm import LMService, ScriptedProvider
from .provenance import derivation_script
from .retriever import Retriever

# exit codes per failure class
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ENGINE = 3
EXIT_DIFF = 4


def _err(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")


def cmd_ingest(args) -> int:
    db = DBService(args.corpus)
    refs = db.ingest_dataset(args.path, args.dataset)
    print(f"ingested {len(refs)} tables into dataset {args.dataset!r}:")
    for r in refs:
        print(f"  {r.table_id}  ({r.row_count} rows, {len(r.column_names)} columns)")
    return EXIT_OK


def cmd_index(args) -> int:
    db = DBService(args.corpus)
    retriever = Retriever(db, LMService(ScriptedProvider()), dataset_id=args.dataset)
    idx = retriever.build_index()
    degraded = " (degraded: lexical only)" if idx.degraded else ""
    print(f"indexed {len(idx.summaries)} tables for dataset {args.dataset!r}{degraded}")
    return EXIT_OK


def cmd_ask(args) -> int:
    db = DBService(args.corpus)
    replies = None
    trace = None
    direct = args.direct_synthesis
    if args.trace:
        trace = TraceFile.load(args.trace)
        replies = trace.replies
        direct = direct or trace.direct_synthesis
    question = args.question or (trace.question if trace else "")
    if not question:
        _err("usage", "no question given (argument or trace file)")
        return EXIT_USAGE
    res = run_question(db, args.dataset, question, replies, direct)
    print(res.reply)
    print()
    model = res.session.model
    print(f"model revision {model.revision}; views:")
    for v in model.views:
        ref = f" -> {v.materialized_ref}" if v.materialized_ref else ""
        print(f"  {v.view_id} [{v.status}]{ref}")
    if model.transformation:
        script = derivation_script(
            res.session.provenance, res.conductor.executed_transformation(res.session)
        )
        out = Path(args.corpus) / f"derivation-{res.session.session_id}.sql"
        out.write_text(script)
        print(f"derivation script: {out}")
    usage = res.conductor.usage_totals(res.session)
    print(
        f"tokens: {usage.input_tokens} in / {usage.output_tokens} out; "
        f"time: {res.total_time:.2f}s total, {res.llm_time:.2f}s llm, "
        f"{res.non_llm_time:.2f}s non-llm"
    )
    if args.record:
        if trace is None:
            trace = TraceFile(dataset=args.dataset, question=question, replies=replies or [])
        record_trace(trace, res)
        trace.dump(args.record)
        print(f"trace recorded: {args.record}")
    return EXIT_OK


def cmd_replay(args) -> int:
    db = DBService(args.corpus)
    trace = TraceFile.load(args.trace)
    res = run_question(
        db, trace.dataset, trace.question, trace.replies, trace.direct_synthesis
    )
    recorded_doc = trace.recorded.get("document")
    problems = diff_documents(recorded_doc, res.session.latest_document())
    if trace.recorded.get("reply") is not None and trace.recorded["reply"] != res.reply:
        problems.append("reply text differs")
    if problems:
        for p in problems:
            print(f"DIFF: {p}")
        _err("replay_diff", "; ".join(problems))
        return EXIT_DIFF
    print("replay matches the recorded session (document and reply identical)")
    return EXIT_OK


def cmd_eval(args) -> int:
    db = DBService(args.corpus)
    rows, summary = run_suite(db, args.suite, parallel=args.parallel)
    for r in rows:
        status = f"{r.score:.3f}"
        print(
            f"[{status}] {r.question[:70]}  answer={r.answer!r} expected={r.expected!r} "
            f"({r.llm_time:.2f}s llm / {r.non_llm_time:.2f}s non-llm)"
        )
        if r.error:
            print(f"        error: {r.error}")
    print(
        f"\nanswer quality: {summary['answer_quality']:.2%} over {summary['questions']} "
        f"questions; time {summary['total_time']:.2f}s "
        f"(llm {summary['llm_time']:.2f}s, non-llm {summary['non_llm_time']:.2f}s)"
    )
    if args.out:
        jp, cp = write_results(rows, summary, args.out)
        print(f"results written: {jp}, {cp}")
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = ApiConfig.from_env()
    cfg.corpus_root = args.corpus
    if args.host:
        cfg.host = args.host
    if args.port:
        cfg.port = args.port
    serve(cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tablescout",
        description="Agentic data discovery and preparation over tabular corpora.",
    )
    parser.add_argument(
        "--corpus",
        default="./corpus",
        help="corpus root directory (default ./corpus, env TABLESCOUT_CORPUS)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="register a directory of CSV/Parquet files")
    p.add_argument("path")
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("index", help="build the retrieval index for a dataset")
    p.add_argument("dataset")
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("ask", help="run a full session headlessly")
    p.add_argument("dataset")
    p.add_argument("question", nargs="?", default="")
    p.add_argument("--trace", help="scripted-provider trace file")
    p.add_argument("--record", help="write a replayable trace to this path")
    p.add_argument("--direct-synthesis", action="store_true")
    p.set_defaults(fn=cmd_ask)

    p = sub.add_parser("replay", help="re-execute a recorded trace and diff the document")
    p.add_argument("trace")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("eval", help="run a question/expected-answer suite")
    p.add_argument("suite")
    p.add_argument("--out", help="basename for results.json/.csv")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    import os

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.corpus == "./corpus" and os.environ.get("TABLESCOUT_CORPUS"):
        args.corpus = os.environ["TABLESCOUT_CORPUS"]
    try:
        return args.fn(args)
    except TableScoutError as e:
        _err(e.code, str(e))
        return EXIT_ENGINE
    except OSError as e:
        _err("io_error", str(e))
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
