"""Parent-side runner for sandboxed scripts.

Scripts run in a child process whose only I/O surface is the workspace
database (query/persist/persist_rows/sample); the OS enforces the wall-clock
and memory budgets. File-system or network access from a script fails inside
the child and surfaces as a ScriptError.
"""

from __future__ import annotations

import json
import subprocess
import sys
from dataclasses import dataclass, field

from .db import DBService, Relation, Workspace
from .errors import BudgetExceeded, ScriptError

WALL_BUDGET_S = 60.0
MEMORY_BUDGET_MB = 512


@dataclass
class ScriptOutcome:
    result: Relation | None
    reads: list[str] = field(default_factory=list)
    writes: list[dict] = field(default_factory=list)
    stdout: str = ""


def run_script(
    db: DBService,
    ws: Workspace,
    program: str,
    wall_budget_s: float = WALL_BUDGET_S,
    memory_mb: int = MEMORY_BUDGET_MB,
) -> ScriptOutcome:
    """Execute a planner script against the workspace; raises ScriptError with
    the child's message verbatim, BudgetExceeded on wall-clock kill."""
    reserved = [t.table_id for t in db.list_tables()]
    job = {
        "workspace_path": str(db.workspace_path(ws.workspace_id)),
        "datasets": [
            [f"ds{i}", str(db.root / "datasets" / f"{d}.db")]
            for i, d in enumerate(ws.attached_sources)
        ],
        "program": program,
        "memory_mb": memory_mb,
        "reserved_ids": reserved,
    }
    with db._lock(f"ws:{ws.workspace_id}"):
        try:
            proc = subprocess.run(
                [sys.executable, "-m", "tablescout._sandbox_child"],
                input=json.dumps(job),
                capture_output=True,
                text=True,
                timeout=wall_budget_s,
            )
        except subprocess.TimeoutExpired:
            raise BudgetExceeded(f"script exceeded the {wall_budget_s:.0f}s wall-clock budget")
    if proc.returncode != 0:
        raise ScriptError(
            f"sandbox terminated abnormally (rc={proc.returncode}): {proc.stderr.strip()[:500]}"
        )
    try:
        report = json.loads(proc.stdout)
    except json.JSONDecodeError:
        raise ScriptError(f"sandbox produced no report: {proc.stdout[:200]!r}")
    if not report["ok"]:
        if report.get("error_type") == "MemoryError":
            raise BudgetExceeded(report["error"])
        raise ScriptError(report["error"])

    for w in report.get("writes", []):
        if w["table_id"] not in ws.intermediate_tables:
            ws.intermediate_tables.append(w["table_id"])
    result = None
    if report.get("result") is not None:
        r = report["result"]
        result = Relation(columns=r["columns"], rows=[tuple(x) for x in r["rows"]])
    return ScriptOutcome(
        result=result,
        reads=report.get("reads", []),
        writes=report.get("writes", []),
        stdout=report.get("stdout", ""),
    )
