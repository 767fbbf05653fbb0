"""Domain types for the reified target model.

A user's active information need is made concrete as a pair of (a) declared
target views and (b) an executable transformation over them. Executing the
transformation over materialized views yields the answer document. All types
serialize to plain JSON dicts with the field names used throughout the HTTP
API and trace files.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass, field

DECLARED_TYPES = ("integer", "real", "text", "boolean", "date", "timestamp")

MAX_MODEL_REVISIONS = 100  # retained immutable snapshots per session


@dataclass
class InformationNeed:
    """The user's current articulation plus its refinement history."""

    text: str
    history: list[str] = field(default_factory=list)

    def refine(self, message: str) -> None:
        # history is append-only across a session
        self.history.append(message)
        self.text = message

    def to_dict(self) -> dict:
        return {"text": self.text, "history": list(self.history)}

    @classmethod
    def from_dict(cls, d: dict) -> "InformationNeed":
        return cls(text=d["text"], history=list(d.get("history", [])))


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    declared_type: str = "text"
    description: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "declared_type": self.declared_type,
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSpec":
        return cls(
            name=d["name"],
            declared_type=d.get("declared_type", "text"),
            description=d.get("description", ""),
        )


@dataclass(frozen=True)
class ViewSpec:
    view_id: str
    columns: tuple[ColumnSpec, ...] = ()
    status: str = "declared"  # declared | materialized
    materialized_ref: str | None = None

    def to_dict(self) -> dict:
        return {
            "view_id": self.view_id,
            "columns": [c.to_dict() for c in self.columns],
            "status": self.status,
            "materialized_ref": self.materialized_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViewSpec":
        return cls(
            view_id=d["view_id"],
            columns=tuple(ColumnSpec.from_dict(c) for c in d.get("columns", [])),
            status=d.get("status", "declared"),
            materialized_ref=d.get("materialized_ref"),
        )


@dataclass(frozen=True)
class TransformationS:
    kind: str  # sql | script
    body: str
    declared_inputs: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "body": self.body,
            "declared_inputs": list(self.declared_inputs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformationS":
        return cls(
            kind=d["kind"],
            body=d["body"],
            declared_inputs=tuple(d.get("declared_inputs", [])),
        )


@dataclass(frozen=True)
class TargetModel:
    """Immutable snapshot of the reified model at one revision.

    Mutations go through :meth:`with_edit`, which returns a new snapshot with
    revision + 1; published snapshots are never edited in place.
    """

    views: tuple[ViewSpec, ...] = ()
    transformation: TransformationS | None = None
    revision: int = 0

    def view_ids(self) -> list[str]:
        return [v.view_id for v in self.views]

    def get_view(self, view_id: str) -> ViewSpec | None:
        for v in self.views:
            if v.view_id == view_id:
                return v
        return None

    def with_edit(
        self,
        add: list[ViewSpec] | None = None,
        remove: list[str] | None = None,
        modify: list[ViewSpec] | None = None,
        transformation: TransformationS | None = None,
        clear_transformation: bool = False,
    ) -> "TargetModel":
        views = list(self.views)
        if remove:
            views = [v for v in views if v.view_id not in set(remove)]
        if modify:
            by_id = {v.view_id: v for v in modify}
            views = [by_id.get(v.view_id, v) for v in views]
        if add:
            views.extend(add)
        s = None if clear_transformation else (transformation or self.transformation)
        return TargetModel(
            views=tuple(views), transformation=s, revision=self.revision + 1
        )

    def to_dict(self) -> dict:
        return {
            "views": [v.to_dict() for v in self.views],
            "transformation": self.transformation.to_dict() if self.transformation else None,
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetModel":
        return cls(
            views=tuple(ViewSpec.from_dict(v) for v in d.get("views", [])),
            transformation=(
                TransformationS.from_dict(d["transformation"])
                if d.get("transformation")
                else None
            ),
            revision=d.get("revision", 0),
        )


@dataclass
class Document:
    """The answer relation produced by executing the transformation."""

    rows: list[tuple]
    schema: list[ColumnSpec]
    produced_by: int
    answer_text: str | None = None

    def to_dict(self) -> dict:
        return {
            "rows": [list(r) for r in self.rows],
            "schema": [c.to_dict() for c in self.schema],
            "produced_by": self.produced_by,
            "answer_text": self.answer_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        return cls(
            rows=[tuple(r) for r in d.get("rows", [])],
            schema=[ColumnSpec.from_dict(c) for c in d.get("schema", [])],
            produced_by=d.get("produced_by", 0),
            answer_text=d.get("answer_text"),
        )


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    subject: str = ""

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "subject": self.subject}


def _sql_parses(body: str) -> str | None:
    """Return a syntax-error message, or None when the statement parses.

    Missing tables are fine here — views may not be materialized yet. Only
    genuine syntax problems count.
    """
    conn = sqlite3.connect(":memory:")
    try:
        conn.execute(body)
    except sqlite3.Error as e:
        msg = str(e)
        if "syntax error" in msg or "unrecognized token" in msg or "incomplete input" in msg:
            return msg
    finally:
        conn.close()
    return None


def _script_parses(body: str) -> str | None:
    try:
        compile(body, "<transformation>", "exec")
    except SyntaxError as e:
        return str(e)
    return None


def validate_model(m: TargetModel) -> list[Violation]:
    """Collect every invariant violation; an empty list means well-formed."""
    out: list[Violation] = []
    seen: set[str] = set()
    for v in m.views:
        if v.view_id in seen:
            out.append(
                Violation("DuplicateViewId", f"duplicate view_id {v.view_id!r}", v.view_id)
            )
        seen.add(v.view_id)
        col_seen: set[str] = set()
        for c in v.columns:
            if c.name in col_seen:
                out.append(
                    Violation(
                        "DuplicateColumn",
                        f"view {v.view_id!r} declares column {c.name!r} twice",
                        v.view_id,
                    )
                )
            col_seen.add(c.name)
            if not c.description:
                out.append(
                    Violation(
                        "EmptyDescription",
                        f"column {c.name!r} of view {v.view_id!r} has no description",
                        v.view_id,
                    )
                )
            if c.declared_type not in DECLARED_TYPES:
                out.append(
                    Violation(
                        "UnknownType",
                        f"column {c.name!r} declares unknown type {c.declared_type!r}",
                        v.view_id,
                    )
                )
        if v.status == "materialized" and not v.materialized_ref:
            out.append(
                Violation(
                    "MissingMaterializedRef",
                    f"view {v.view_id!r} is materialized but has no materialized_ref",
                    v.view_id,
                )
            )
        if v.status == "declared" and v.materialized_ref:
            out.append(
                Violation(
                    "UnexpectedMaterializedRef",
                    f"view {v.view_id!r} is declared but carries a materialized_ref",
                    v.view_id,
                )
            )
    s = m.transformation
    if s is not None:
        ids = set(m.view_ids())
        for inp in s.declared_inputs:
            if inp not in ids:
                out.append(
                    Violation(
                        "MissingInput",
                        f"transformation declares input {inp!r} but no such view exists",
                        inp,
                    )
                )
        if s.kind == "sql":
            err = _sql_parses(s.body)
        elif s.kind == "script":
            err = _script_parses(s.body)
        else:
            err = f"unknown transformation kind {s.kind!r}"
        if err:
            out.append(Violation("UnparseableS", f"transformation does not parse: {err}"))
    return out


def model_diff(old: TargetModel, new: TargetModel) -> dict:
    """User-visible diff between two revisions."""
    old_ids = {v.view_id: v for v in old.views}
    new_ids = {v.view_id: v for v in new.views}
    added = [vid for vid in new_ids if vid not in old_ids]
    removed = [vid for vid in old_ids if vid not in new_ids]
    changed = [
        vid
        for vid in new_ids
        if vid in old_ids and new_ids[vid].to_dict() != old_ids[vid].to_dict()
    ]
    s_changed = (old.transformation.to_dict() if old.transformation else None) != (
        new.transformation.to_dict() if new.transformation else None
    )
    return {
        "added_views": sorted(added),
        "removed_views": sorted(removed),
        "changed_views": sorted(changed),
        "transformation_changed": s_changed,
    }
