"""Materializes declared views via a bounded planning loop over operators.

Structured operators (join/union/projection/semantic ops) take parameters
from the planner while application code generates and executes the SQL;
free-form query/script execution remains as a fallback. Every persisted
intermediate gets exactly one provenance transformation node whose payload
replays it deterministically.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .db import DBService, ProbeResult, TableRef, Workspace, quote_ident
from .errors import (
    ColumnNotFound,
    EmbeddingFailed,
    KeyNotFound,
    NonTextColumns,
    ProviderUnavailable,
    SchemaMismatch,
    ScriptMismatch,
    SqlError,
    TableNotFound,
    TableScoutError,
    TypeMismatch,
)
from .llm import ChatMessage, ChatRequest, LMService
from .model import ColumnSpec, TargetModel, ViewSpec
from .planning import ActionRecord, materializer_messages, summarize_messages
from .provenance import ProvenanceGraph, ProvenanceNode
from .retriever import RetrievalQuery, Retriever
from .sandbox import ScriptOutcome, run_script

DEFAULT_M_MAX = 10
SEMANTIC_COLUMN_BATCH = 20
EXHAUSTIVE_PAIR_LIMIT = 1_000_000
BLOCKED_CANDIDATES = 50

_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_TRUE_WORDS = {"true", "t", "yes", "1"}
_FALSE_WORDS = {"false", "f", "no", "0"}


@dataclass
class SemanticJoinConfig:
    left_cols: list[str]
    right_cols: list[str]
    p: int = 1
    beta: float = 0.7

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be within [0,1]")


@dataclass
class MaterializerTask:
    target: TargetModel
    guidance: str | None = None
    shared_context: list = field(default_factory=list)

    def __post_init__(self):
        if not any(v.status == "declared" for v in self.target.views):
            raise ValueError("task target has no declared (unmaterialized) view")


@dataclass
class MaterializeResult:
    views: list[ViewSpec]
    nodes_added: list[str]
    complete: bool
    iterations: int
    records: list[ActionRecord]
    error: str | None = None


def trigrams(s: str) -> set[str]:
    s = s.lower()
    if len(s) < 3:
        return {s} if s else set()
    return {s[i : i + 3] for i in range(len(s) - 2)}


def trigram_jaccard(a: str, b: str) -> float:
    ta, tb = trigrams(a), trigrams(b)
    union = ta | tb
    if not union:
        return 1.0 if a.lower() == b.lower() else 0.0
    return len(ta & tb) / len(union)


def sql_literal(v) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, float)):
        return repr(v)
    return "'" + str(v).replace("'", "''") + "'"


def _coerce_typed(value, declared_type: str):
    """Coerce one synthesized value; returns (value, flagged)."""
    if value is None:
        return None, False
    try:
        if declared_type == "integer":
            return int(value), False
        if declared_type == "real":
            return float(value), False
        if declared_type == "boolean":
            if isinstance(value, bool):
                return int(value), False
            s = str(value).strip().lower()
            if s in _TRUE_WORDS:
                return 1, False
            if s in _FALSE_WORDS:
                return 0, False
            return None, True
        if declared_type in ("date", "timestamp"):
            from datetime import date, datetime

            parser = date.fromisoformat if declared_type == "date" else datetime.fromisoformat
            parser(str(value))
            return str(value), False
        return str(value), False
    except (ValueError, TypeError):
        return None, True


class Materializer:
    def __init__(
        self,
        db: DBService,
        lm: LMService,
        retriever: Retriever,
        ws: Workspace,
        graph: ProvenanceGraph,
    ):
        self.db = db
        self.lm = lm
        self.retriever = retriever
        self.ws = ws
        self.graph = graph
        self._iteration = 0
        self._ordinal = 0
        self.nodes_added: list[str] = []
        self.degraded = False

    # --- provenance helpers ------------------------------------------------

    def _ensure_source(self, table_id: str) -> str:
        node = self.graph.producer_of(table_id)
        if node is not None:
            return node.node_id
        node_id = f"src:{table_id}"
        if node_id not in self.graph.nodes:
            self.graph.add_node(
                ProvenanceNode(
                    node_id=node_id,
                    kind="source_table",
                    label=f"source table {table_id}",
                    output_ref=table_id,
                )
            )
            self.nodes_added.append(node_id)
        return node_id

    def _record_transformation(
        self,
        output_table: str,
        payload: str,
        payload_kind: str,
        inputs: list[str],
        label: str,
    ) -> ProvenanceNode:
        node_id = f"tx:{output_table}"
        node = ProvenanceNode(
            node_id=node_id,
            kind="transformation",
            label=label,
            payload=payload,
            payload_kind=payload_kind,
            output_ref=output_table,
        )
        self.graph.add_node(node)
        self.nodes_added.append(node_id)
        for t in inputs:
            self.graph.add_edge(self._input_node(t), node_id)
        return node

    def _input_node(self, table_id: str) -> str:
        producer = self.graph.producer_of(table_id)
        if producer is not None:
            return producer.node_id
        return self._ensure_source(table_id)

    def _next_table_id(self, explicit: str | None = None) -> str:
        if explicit:
            return explicit
        self._ordinal += 1
        return f"mat_{max(self._iteration, 1)}_{self._ordinal}"

    def _ref(self, table_id: str) -> TableRef:
        try:
            return self.db.resolve_ref(self.ws, table_id)
        except TableNotFound:
            raise TableNotFound(
                f"table {table_id!r} is not visible in this workspace"
            )

    # --- structured relational operators -----------------------------------

    def op_join(
        self,
        left: str,
        right: str,
        keys: list[tuple[str, str]],
        join_type: str = "inner",
        out: str | None = None,
    ) -> TableRef:
        if join_type not in ("inner", "left"):
            raise ValueError(f"join_type must be inner or left, got {join_type!r}")
        if not keys:
            raise KeyNotFound("join requires at least one key pair")
        lref, rref = self._ref(left), self._ref(right)
        ltypes = dict(zip(lref.column_names, lref.column_types))
        rtypes = dict(zip(rref.column_names, rref.column_types))
        for lk, rk in keys:
            if lk not in ltypes:
                raise KeyNotFound(f"key column {lk!r} not found in {left}")
            if rk not in rtypes:
                raise KeyNotFound(f"key column {rk!r} not found in {right}")
            if not _types_compatible(ltypes[lk], rtypes[rk]):
                raise TypeMismatch(
                    f"join key {lk!r} ({ltypes[lk]}) is not comparable with "
                    f"{rk!r} ({rtypes[rk]})"
                )
        right_keys = {rk for _, rk in keys}
        select_cols = [f"l.{quote_ident(c)} AS {quote_ident(c)}" for c in lref.column_names]
        out_names = set(lref.column_names)
        for c in rref.column_names:
            if c in right_keys:
                continue
            name = c if c not in out_names else f"{c}_r"
            out_names.add(name)
            select_cols.append(f"r.{quote_ident(c)} AS {quote_ident(name)}")
        on = " AND ".join(
            f"l.{quote_ident(lk)} = r.{quote_ident(rk)}" for lk, rk in keys
        )
        op = "JOIN" if join_type == "inner" else "LEFT JOIN"
        select = (
            f"SELECT {', '.join(select_cols)} FROM {quote_ident(left)} l "
            f"{op} {quote_ident(right)} r ON {on}"
        )
        out_id = self._next_table_id(out)
        ref = self.db.persist_as_table(self.ws, select, out_id)
        self._record_transformation(
            out_id,
            f"CREATE TABLE {quote_ident(out_id)} AS {select}",
            "sql",
            [left, right],
            f"{join_type} join of {left} and {right}",
        )
        return ref

    def op_union(self, inputs: list[str], mode: str = "by_name", out: str | None = None) -> TableRef:
        if len(inputs) < 2:
            raise SchemaMismatch("union requires at least 2 inputs")
        refs = [self._ref(t) for t in inputs]
        first = refs[0]
        if mode == "by_name":
            base = list(first.column_names)
            base_set = set(base)
            for r in refs[1:]:
                if set(r.column_names) != base_set:
                    raise SchemaMismatch(
                        f"union by_name requires shared column names; {r.table_id} "
                        f"has {sorted(set(r.column_names) ^ base_set)} mismatched"
                    )
            selects = [
                f"SELECT {', '.join(quote_ident(c) for c in base)} FROM {quote_ident(r.table_id)}"
                for r in refs
            ]
        elif mode == "by_position":
            arity = len(first.column_names)
            for r in refs[1:]:
                if len(r.column_names) != arity:
                    raise SchemaMismatch(
                        f"union by_position requires equal arity; {r.table_id} has "
                        f"{len(r.column_names)} columns, expected {arity}"
                    )
            selects = []
            for r in refs:
                cols = ", ".join(
                    f"{quote_ident(c)} AS {quote_ident(n)}"
                    for c, n in zip(r.column_names, first.column_names)
                )
                selects.append(f"SELECT {cols} FROM {quote_ident(r.table_id)}")
        else:
            raise ValueError(f"unknown union mode {mode!r}")
        select = " UNION ALL ".join(selects)
        out_id = self._next_table_id(out)
        ref = self.db.persist_as_table(self.ws, select, out_id)
        self._record_transformation(
            out_id,
            f"CREATE TABLE {quote_ident(out_id)} AS {select}",
            "sql",
            list(inputs),
            f"union of {len(inputs)} tables ({mode})",
        )
        return ref

    def op_projection(
        self,
        input: str,
        columns: list[str],
        renames: dict[str, str] | None = None,
        out: str | None = None,
    ) -> TableRef:
        ref = self._ref(input)
        renames = renames or {}
        have = set(ref.column_names)
        for c in columns:
            if c not in have:
                raise ColumnNotFound(f"column {c!r} not found in {input}")
        select_cols = ", ".join(
            f"{quote_ident(c)} AS {quote_ident(renames.get(c, c))}" for c in columns
        )
        select = f"SELECT {select_cols} FROM {quote_ident(input)}"
        out_id = self._next_table_id(out)
        new_ref = self.db.persist_as_table(self.ws, select, out_id)
        self._record_transformation(
            out_id,
            f"CREATE TABLE {quote_ident(out_id)} AS {select}",
            "sql",
            [input],
            f"projection of {input}",
        )
        return new_ref

    # --- semantic operators -------------------------------------------------

    def op_semantic_join(
        self, left: str, right: str, cfg: SemanticJoinConfig, out: str | None = None
    ) -> TableRef:
        lref, rref = self._ref(left), self._ref(right)
        for ref, cols in ((lref, cfg.left_cols), (rref, cfg.right_cols)):
            types = dict(zip(ref.column_names, ref.column_types))
            for c in cols:
                if c not in types:
                    raise ColumnNotFound(f"column {c!r} not found in {ref.table_id}")
                if types[c] != "text":
                    raise NonTextColumns(
                        f"semantic join requires text columns; {ref.table_id}.{c} "
                        f"is {types[c]}"
                    )
        lrows = self.db.execute_query(
            self.ws, f"SELECT * FROM {quote_ident(left)} ORDER BY rowid"
        ).relation
        rrows = self.db.execute_query(
            self.ws, f"SELECT * FROM {quote_ident(right)} ORDER BY rowid"
        ).relation
        lidx = [lrows.columns.index(c) for c in cfg.left_cols]
        ridx = [rrows.columns.index(c) for c in cfg.right_cols]
        ltexts = [" ".join("" if r[i] is None else str(r[i]) for i in lidx) for r in lrows.rows]
        rtexts = [" ".join("" if r[i] is None else str(r[i]) for i in ridx) for r in rrows.rows]

        beta = cfg.beta
        cos = None
        if beta > 0 and ltexts and rtexts:
            try:
                lv = np.stack([v.as_array() for v in self.lm.embed(ltexts)])
                rv = np.stack([v.as_array() for v in self.lm.embed(rtexts)])
                ln = np.linalg.norm(lv, axis=1, keepdims=True)
                rn = np.linalg.norm(rv, axis=1, keepdims=True)
                lv = np.divide(lv, np.where(ln > 0, ln, 1.0))
                rv = np.divide(rv, np.where(rn > 0, rn, 1.0))
                cos = lv @ rv.T
            except (ProviderUnavailable, EmbeddingFailed):
                beta = 0.0  # pure syntactic fallback
                self.degraded = True

        matched: list[tuple] = []
        n_pairs = len(ltexts) * len(rtexts)
        for i, lt in enumerate(ltexts):
            if cos is not None and n_pairs > EXHAUSTIVE_PAIR_LIMIT:
                candidates = np.argsort(-cos[i])[:BLOCKED_CANDIDATES]
            else:
                candidates = range(len(rtexts))
            scored = []
            for j in candidates:
                s = (1 - beta) * trigram_jaccard(lt, rtexts[j])
                if cos is not None and beta > 0:
                    s += beta * float(cos[i][j])
                scored.append((j, s))
            scored.sort(key=lambda t: (-t[1], t[0]))  # ties by right row order
            for j, s in scored[: cfg.p]:
                matched.append((i, j, s))

        out_names = list(lrows.columns)
        seen = set(out_names)
        right_out = []
        for c in rrows.columns:
            name = c if c not in seen else f"{c}_r"
            seen.add(name)
            right_out.append(name)
        columns = out_names + right_out + ["match_score"]
        types = (
            list(lref.column_types)
            + list(rref.column_types)
            + ["real"]
        )
        rows = [
            tuple(lrows.rows[i]) + tuple(rrows.rows[j]) + (float(s),)
            for i, j, s in matched
        ]
        out_id = self._next_table_id(out)
        ref = self.db.persist_rows(self.ws, out_id, columns, types, rows)
        header = (
            f"-- semantic_join(left={left}, right={right}, left_cols={cfg.left_cols}, "
            f"right_cols={cfg.right_cols}, p={cfg.p}, beta={cfg.beta})"
        )
        self._record_transformation(
            out_id,
            header + "\n" + _rows_replay_sql(out_id, columns, types, rows),
            "sql",
            [left, right],
            f"semantic join of {left} and {right}",
        )
        return ref

    def op_semantic_column(
        self,
        input: str,
        new_column: ColumnSpec,
        condition_columns: list[str],
        instruction: str,
        batch_size: int = SEMANTIC_COLUMN_BATCH,
        out: str | None = None,
    ) -> TableRef:
        ref = self._ref(input)
        have = set(ref.column_names)
        for c in condition_columns:
            if c not in have:
                raise ColumnNotFound(f"column {c!r} not found in {input}")
        rel = self.db.execute_query(
            self.ws, f"SELECT * FROM {quote_ident(input)} ORDER BY rowid"
        ).relation
        cond_idx = [rel.columns.index(c) for c in condition_columns]

        values: list = []
        flags: list[int] = []
        for start in range(0, len(rel.rows), max(batch_size, 1)):
            batch = rel.rows[start : start + batch_size]
            lines = [
                f"{i}: " + " | ".join(f"{c}={row[ix]}" for c, ix in zip(condition_columns, cond_idx))
                for i, row in enumerate(batch)
            ]
            prompt = (
                f"{instruction}\n\nFor each numbered row below produce one value of "
                f"type {new_column.declared_type} for the column "
                f"{new_column.name!r} ({new_column.description}). Reply as JSON: "
                f'{{"values": [v0, v1, ...]}} with exactly {len(batch)} values.\n\n'
                + "\n".join(lines)
            )
            res = self.lm.complete(
                ChatRequest(
                    messages=[
                        ChatMessage("system", "You synthesize one column value per row."),
                        ChatMessage("user", prompt),
                    ],
                    response_format="structured",
                    structure_schema="column_values",
                )
            )
            raw = list(res.parsed["values"])
            raw = (raw + [None] * len(batch))[: len(batch)]
            for v in raw:
                coerced, flagged = _coerce_typed(v, new_column.declared_type)
                values.append(coerced)
                flags.append(1 if flagged else 0)

        flag_col = f"{new_column.name}_flag"
        columns = list(rel.columns) + [new_column.name, flag_col]
        types = list(ref.column_types) + [new_column.declared_type, "boolean"]
        rows = [
            tuple(r) + (values[i], flags[i]) for i, r in enumerate(rel.rows)
        ]
        out_id = self._next_table_id(out)
        new_ref = self.db.persist_rows(self.ws, out_id, columns, types, rows)
        header = (
            f"-- semantic_column(input={input}, new_column={new_column.name}, "
            f"condition_columns={condition_columns})\n"
            f"-- instruction: {instruction}"
        )
        self._record_transformation(
            out_id,
            header + "\n" + _rows_replay_sql(out_id, columns, types, rows),
            "sql",
            [input],
            f"semantic column {new_column.name} on {input}",
        )
        return new_ref

    # --- free-form fallbacks --------------------------------------------------

    def op_query_exec(
        self, sql: str, persist_as: str | None = None
    ) -> TableRef | ProbeResult:
        if persist_as is None:
            return self.db.execute_query(self.ws, sql)
        out_id = self._next_table_id(persist_as)
        visible = set(self.db.visible_tables(self.ws))
        ref = self.db.persist_as_table(self.ws, sql, out_id)
        inputs = sorted(
            t for t in set(_WORD_RE.findall(sql)) & visible if t != out_id
        )
        self._record_transformation(
            out_id,
            f"CREATE TABLE {quote_ident(out_id)} AS {sql}",
            "sql",
            inputs,
            "custom query",
        )
        return ref

    def op_script_exec(self, program: str) -> ScriptOutcome:
        outcome = run_script(self.db, self.ws, program)
        if outcome.writes:
            w = outcome.writes[0]
            known = set(self.db.visible_tables(self.ws)) | {
                n.output_ref for n in self.graph.nodes.values() if n.output_ref
            }
            inputs = sorted(t for t in outcome.reads if t in known and t != w["table_id"])
            self._record_transformation(
                w["table_id"],
                program,
                "python",
                inputs,
                "custom script",
            )
        return outcome

    # --- the bounded loop -------------------------------------------------------

    def materialize(self, task: MaterializerTask, m_max: int = DEFAULT_M_MAX) -> MaterializeResult:
        views = {v.view_id: v for v in task.target.views}
        records: list[ActionRecord] = []
        older_summary: str | None = None
        last_error: str | None = None
        self.nodes_added = []

        for iteration in range(1, m_max + 1):
            self._iteration = iteration
            if len(records) > 10 and older_summary is None:
                older_summary = self._summarize(records[:-10])
            views_block = "\n".join(
                f"- {v.view_id} [{v.status}]"
                + (f" -> {v.materialized_ref}" if v.materialized_ref else "")
                + ": "
                + ", ".join(f"{c.name}:{c.declared_type}" for c in v.columns)
                for v in views.values()
            )
            messages = materializer_messages(
                views_block,
                task.guidance,
                task.shared_context,
                records,
                older_summary,
                last_error,
                iteration,
                m_max,
            )
            plan = self.lm.complete(
                ChatRequest(messages=messages, response_format="structured", structure_schema="plan")
            ).parsed
            records.append(
                ActionRecord(
                    kind="situational_analysis",
                    outcome=plan.get("analysis", ""),
                    iteration=iteration,
                )
            )
            last_error = None
            for action in plan.get("actions", []):
                kind = action.get("kind", "")
                if kind == "situational_analysis":
                    continue
                params = action.get("params", {})
                record = ActionRecord(kind=kind, params=params, iteration=iteration)
                records.append(record)
                try:
                    record.outcome = self._execute_action(kind, params, views, task)
                except ScriptMismatch:
                    raise  # scripted-trace drift is a hard failure, never recovery fodder
                except TableScoutError as e:
                    record.error = str(e)
                    last_error = f"{kind}: {e}"
                    break  # later actions often depend on earlier outcomes
                except (ValueError, KeyError, TypeError) as e:
                    record.error = f"{type(e).__name__}: {e}"
                    last_error = f"{kind}: {record.error}"
                    break
            if all(v.status == "materialized" for v in views.values()):
                return MaterializeResult(
                    views=list(views.values()),
                    nodes_added=list(self.nodes_added),
                    complete=True,
                    iterations=iteration,
                    records=records,
                )
        unmaterialized = sorted(v.view_id for v in views.values() if v.status != "materialized")
        return MaterializeResult(
            views=list(views.values()),
            nodes_added=list(self.nodes_added),
            complete=False,
            iterations=m_max,
            records=records,
            error=f"iteration budget exhausted; unmaterialized views: {', '.join(unmaterialized)}",
        )

    def _summarize(self, records: list[ActionRecord]) -> str:
        try:
            return self.lm.complete(
                ChatRequest(messages=summarize_messages(records))
            ).text
        except ProviderUnavailable:
            return f"(summary unavailable; {len(records)} earlier actions)"

    def _execute_action(
        self, kind: str, params: dict, views: dict[str, ViewSpec], task: MaterializerTask
    ) -> str:
        bind = params.get("bind_view")
        if kind == "join":
            ref = self.op_join(
                params["left"],
                params["right"],
                [tuple(k) for k in params["keys"]],
                params.get("join_type", "inner"),
                params.get("as"),
            )
        elif kind == "union":
            ref = self.op_union(params["inputs"], params.get("mode", "by_name"), params.get("as"))
        elif kind == "projection":
            ref = self.op_projection(
                params["input"], params["columns"], params.get("renames"), params.get("as")
            )
        elif kind == "semantic_join":
            cfg = SemanticJoinConfig(
                left_cols=params["left_cols"],
                right_cols=params["right_cols"],
                p=params.get("p", 1),
                beta=params.get("beta", 0.7),
            )
            ref = self.op_semantic_join(params["left"], params["right"], cfg, params.get("as"))
        elif kind == "semantic_column":
            ref = self.op_semantic_column(
                params["input"],
                ColumnSpec.from_dict(params["new_column"]),
                params.get("condition_columns", []),
                params.get("instruction", ""),
                params.get("batch_size", SEMANTIC_COLUMN_BATCH),
                params.get("as"),
            )
        elif kind == "query_exec":
            res = self.op_query_exec(params["sql"], params.get("persist_as"))
            if isinstance(res, ProbeResult):
                return f"{len(res.relation.rows)} rows"
            ref = res
        elif kind == "script_exec":
            outcome = self.op_script_exec(params["program"])
            if bind and outcome.writes:
                self._bind(views, bind, outcome.writes[0]["table_id"])
                return f"persisted {outcome.writes[0]['table_id']}; bound to {bind}"
            if outcome.writes:
                return f"persisted {outcome.writes[0]['table_id']}"
            return (outcome.stdout or "script completed")[:400]
        elif kind == "retrieve":
            queries = params.get("queries") or [params.get("text", "")]
            results = self.retriever.retrieve_many(
                [RetrievalQuery(text=q, k=params.get("k", self.retriever.cfg.k)) for q in queries]
            )
            task.shared_context.extend(results)
            found = sorted({r.table_id for rr in results for r in rr.ranked})
            return f"retrieved: {', '.join(found)}"
        elif kind == "enumerate":
            refs = self.retriever.enumerate(params["pattern"])
            return f"enumerated {len(refs)} tables: {', '.join(r.table_id for r in refs[:60])}"
        elif kind == "context_extract":
            notes = []
            for probe in params.get("probes", []):
                try:
                    pr = self.db.execute_query(self.ws, probe["query"], row_limit=50)
                    notes.append(f"{probe.get('purpose', 'probe')}: {pr.relation.rows[:10]}")
                except SqlError as e:
                    notes.append(f"{probe.get('purpose', 'probe')}: ERROR {e}")
            return " ; ".join(notes) if notes else "no probes"
        else:
            raise ValueError(f"unknown materializer action kind {kind!r}")
        if bind:
            self._bind(views, bind, ref.table_id)
            return f"persisted {ref.table_id} ({ref.row_count} rows); bound to {bind}"
        return f"persisted {ref.table_id} ({ref.row_count} rows)"

    def _bind(self, views: dict[str, ViewSpec], view_id: str, table_id: str) -> None:
        view = views.get(view_id)
        if view is None:
            raise TableNotFound(f"bind_view references unknown view {view_id!r}")
        ref = self.db.resolve_ref(self.ws, table_id)
        declared = {c.name for c in view.columns}
        missing = declared - set(ref.column_names)
        if missing:
            raise SchemaMismatch(
                f"table {table_id} is missing declared columns of view "
                f"{view_id}: {sorted(missing)}"
            )
        views[view_id] = ViewSpec(
            view_id=view.view_id,
            columns=view.columns,
            status="materialized",
            materialized_ref=table_id,
        )


def _types_compatible(a: str, b: str) -> bool:
    numeric = {"integer", "real", "boolean"}
    return a == b or (a in numeric and b in numeric)


def _rows_replay_sql(table_id: str, columns: list[str], types: list[str], rows: list[tuple]) -> str:
    from .db import _STORAGE

    cols_sql = ", ".join(
        f"{quote_ident(c)} {_STORAGE.get(t, 'TEXT')}" for c, t in zip(columns, types)
    )
    out = [f"CREATE TABLE {quote_ident(table_id)} ({cols_sql});"]
    for row in rows:
        vals = ", ".join(sql_literal(v) for v in row)
        out.append(f"INSERT INTO {quote_ident(table_id)} VALUES ({vals});")
    return "\n".join(out)
