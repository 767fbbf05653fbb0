"""Replay of derivation scripts on fresh workspaces.

Replaying reproduces every intermediate table from the source tables alone
and then applies the final transformation, returning the answer relation.
Comparison against the live Document is by row multiset unless the final
transformation orders its output.
"""

from __future__ import annotations

import uuid

from .db import DBService, Relation, Workspace
from .errors import ScriptError
from .provenance import parse_derivation_script
from .sandbox import run_script


def replay_derivation(
    db: DBService, datasets: list[str], script_text: str, workspace_id: str | None = None
) -> tuple[Relation, Workspace]:
    """Run a derivation script in a new workspace attached to ``datasets``.

    Returns the final relation and the workspace (caller drops it)."""
    ws = db.create_workspace(workspace_id or f"replay_{uuid.uuid4().hex[:10]}", attach=datasets)
    steps = parse_derivation_script(script_text)
    if not steps:
        raise ScriptError("derivation script contains no steps")
    result: Relation | None = None
    for step in steps:
        if step.is_final:
            if step.payload_kind == "python":
                outcome = run_script(db, ws, step.payload)
                result = outcome.result or Relation(columns=[], rows=[])
            else:
                result = db.execute_query(ws, step.payload).relation
        elif step.payload_kind == "python":
            run_script(db, ws, step.payload)
        else:
            db.raw_executescript(ws, step.payload)
    if result is None:
        raise ScriptError("derivation script has no final transformation")
    return result, ws


def rows_multiset_equal(a: list[tuple], b: list[tuple]) -> bool:
    if len(a) != len(b):
        return False
    key = lambda r: tuple("\0" if v is None else str(v) for v in r)
    return sorted(map(key, a)) == sorted(map(key, b))
