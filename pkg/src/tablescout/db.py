"""Workspace-isolated storage and execution on embedded SQLite.

Layout under the corpus root:

    corpus.db                 shared read-only catalog (table metadata)
    datasets/<dataset>.db     one database file per ingested dataset
    workspace-<id>.db         per-session workspace (intermediates + state)

A workspace's queries see exactly its attached datasets (ATTACHed read-only)
plus its own intermediate tables; other workspaces' intermediates live in
other files and are unreachable by construction. Probe queries run under a
SQLite authorizer that denies every write opcode.
"""

from __future__ import annotations

import csv
import json
import re
import sqlite3
import threading
import time
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

from .errors import (
    DuplicateDatasetId,
    DuplicateTableId,
    InvalidPattern,
    SqlError,
    TableNotFound,
    TableNotVisible,
    UnreadableFile,
)

MAX_SCAN_KEYWORDS = 32
MAX_KEYWORD_LEN = 128
PATTERN_BUDGET_S = 0.100

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

# declared_type -> SQLite storage affinity
_STORAGE = {
    "integer": "INTEGER",
    "real": "REAL",
    "boolean": "INTEGER",
    "text": "TEXT",
    "date": "TEXT",
    "timestamp": "TEXT",
}

_TRUE = {"true", "t", "yes"}
_FALSE = {"false", "f", "no"}


@dataclass
class Relation:
    columns: list[str]
    rows: list[tuple]

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}


@dataclass
class ProbeResult:
    relation: Relation
    truncated: bool
    row_limit_applied: int  # 0 means no limit was applied

    def to_dict(self) -> dict:
        return {
            "relation": self.relation.to_dict(),
            "truncated": self.truncated,
            "row_limit_applied": self.row_limit_applied,
        }


@dataclass
class TableRef:
    table_id: str
    source: str  # ingested | external_file | intermediate
    row_count: int
    column_names: list[str]
    column_types: list[str] = field(default_factory=list)
    dataset_id: str | None = None
    workspace_id: str | None = None  # set for intermediates

    def to_dict(self) -> dict:
        return {
            "table_id": self.table_id,
            "source": self.source,
            "row_count": self.row_count,
            "column_names": list(self.column_names),
            "column_types": list(self.column_types),
            "dataset_id": self.dataset_id,
            "workspace_id": self.workspace_id,
        }


@dataclass
class Workspace:
    workspace_id: str
    attached_sources: list[str] = field(default_factory=list)
    intermediate_tables: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "workspace_id": self.workspace_id,
            "attached_sources": list(self.attached_sources),
            "intermediate_tables": list(self.intermediate_tables),
        }


@dataclass
class ScanCount:
    tf_cells: int = 0
    tf_colnames: int = 0


@dataclass
class ScanResult:
    counts: dict[str, dict[str, ScanCount]]  # table_id -> keyword -> counts
    keywords: list[str]
    truncated_keywords: bool = False


def infer_declared_type(values: list[str]) -> str:
    """Map sampled raw strings onto the six-type vocabulary; text on failure."""
    seen = [v for v in values if v is not None and v != ""]
    if not seen:
        return "text"

    def all_pass(fn) -> bool:
        for v in seen:
            try:
                fn(v)
            except (ValueError, TypeError):
                return False
        return True

    lowered = {v.strip().lower() for v in seen}
    if lowered <= (_TRUE | _FALSE):
        return "boolean"
    if all_pass(int):
        return "integer"
    if all_pass(float):
        return "real"
    if all_pass(date.fromisoformat):
        return "date"
    if all_pass(datetime.fromisoformat):
        return "timestamp"
    return "text"


def coerce_value(raw, declared_type: str):
    """Best-effort coercion into the declared type; unparseable values pass
    through unchanged (SQLite stores them as text)."""
    if raw is None or raw == "":
        return None
    try:
        if declared_type == "integer":
            return int(raw)
        if declared_type == "real":
            return float(raw)
        if declared_type == "boolean":
            if isinstance(raw, bool):
                return int(raw)
            s = str(raw).strip().lower()
            if s in _TRUE:
                return 1
            if s in _FALSE:
                return 0
            return raw
    except (ValueError, TypeError):
        return raw
    return raw if not isinstance(raw, (date, datetime)) else raw.isoformat()


def quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def _dedupe_columns(names: list[str]) -> list[str]:
    out, seen = [], set()
    for i, name in enumerate(names):
        base = name.strip() or f"column_{i}"
        candidate, n = base, 1
        while candidate.lower() in seen:
            n += 1
            candidate = f"{base}_{n}"
        seen.add(candidate.lower())
        out.append(candidate)
    return out


class DBService:
    """Shared across sessions; writes are serialized per workspace."""

    def __init__(self, corpus_root: str | Path):
        self.root = Path(corpus_root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "datasets").mkdir(exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._init_catalog()

    # --- internals -------------------------------------------------------

    def _lock(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    @property
    def catalog_path(self) -> Path:
        return self.root / "corpus.db"

    def _dataset_path(self, dataset_id: str) -> Path:
        return self.root / "datasets" / f"{dataset_id}.db"

    def workspace_path(self, workspace_id: str) -> Path:
        return self.root / f"workspace-{workspace_id}.db"

    def _catalog(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.catalog_path, timeout=30)
        conn.execute("PRAGMA busy_timeout=30000")
        return conn

    def _init_catalog(self) -> None:
        with self._lock("catalog"):
            conn = self._catalog()
            try:
                conn.execute(
                    """CREATE TABLE IF NOT EXISTS _tables (
                        table_id TEXT PRIMARY KEY,
                        dataset_id TEXT NOT NULL,
                        source TEXT NOT NULL,
                        row_count INTEGER NOT NULL,
                        column_names TEXT NOT NULL,
                        column_types TEXT NOT NULL,
                        origin_path TEXT
                    )"""
                )
                conn.execute(
                    "CREATE TABLE IF NOT EXISTS _meta (key TEXT PRIMARY KEY, value TEXT)"
                )
                conn.commit()
            finally:
                conn.close()

    def _row_to_ref(self, row) -> TableRef:
        return TableRef(
            table_id=row[0],
            source=row[2],
            row_count=row[3],
            column_names=json.loads(row[4]),
            column_types=json.loads(row[5]),
            dataset_id=row[1],
        )

    # --- catalog reads ---------------------------------------------------

    def list_tables(self, dataset_id: str | None = None) -> list[TableRef]:
        conn = self._catalog()
        try:
            if dataset_id is None:
                rows = conn.execute("SELECT * FROM _tables ORDER BY table_id").fetchall()
            else:
                rows = conn.execute(
                    "SELECT * FROM _tables WHERE dataset_id=? ORDER BY table_id",
                    (dataset_id,),
                ).fetchall()
            return [self._row_to_ref(r) for r in rows]
        finally:
            conn.close()

    def list_datasets(self) -> list[str]:
        conn = self._catalog()
        try:
            rows = conn.execute("SELECT DISTINCT dataset_id FROM _tables ORDER BY 1").fetchall()
            return [r[0] for r in rows]
        finally:
            conn.close()

    def get_table(self, table_id: str) -> TableRef:
        conn = self._catalog()
        try:
            row = conn.execute("SELECT * FROM _tables WHERE table_id=?", (table_id,)).fetchone()
        finally:
            conn.close()
        if row is None:
            raise TableNotFound(f"no such table: {table_id}")
        return self._row_to_ref(row)

    def has_table(self, table_id: str) -> bool:
        conn = self._catalog()
        try:
            row = conn.execute(
                "SELECT 1 FROM _tables WHERE table_id=?", (table_id,)
            ).fetchone()
            return row is not None
        finally:
            conn.close()

    # --- ingestion -------------------------------------------------------

    def ingest_dataset(self, path: str | Path, dataset_id: str) -> list[TableRef]:
        """Register every CSV/Parquet under ``path`` as tables of ``dataset_id``."""
        src = Path(path)
        if not src.exists():
            raise UnreadableFile(f"path does not exist: {src}")
        if not _IDENT_RE.match(dataset_id):
            raise UnreadableFile(f"dataset_id must be an identifier: {dataset_id!r}")

        if src.is_dir():
            files = sorted(
                p for p in src.rglob("*") if p.suffix.lower() in (".csv", ".parquet")
            )
        else:
            files = [src]
            if src.suffix.lower() not in (".csv", ".parquet"):
                raise UnreadableFile(f"unsupported file type: {src.suffix}")

        with self._lock("catalog"):
            if self._dataset_path(dataset_id).exists() or dataset_id in self.list_datasets():
                raise DuplicateDatasetId(f"dataset already ingested: {dataset_id}")
            refs: list[TableRef] = []
            if not files:
                return refs
            ds_conn = sqlite3.connect(self._dataset_path(dataset_id))
            ds_conn.execute("PRAGMA journal_mode=OFF")
            ds_conn.execute("PRAGMA synchronous=OFF")
            cat = self._catalog()
            try:
                for f in files:
                    ref = self._ingest_file(ds_conn, cat, f, dataset_id)
                    refs.append(ref)
                ds_conn.commit()
                cat.commit()
            except Exception:
                cat.close()
                ds_conn.close()
                self._dataset_path(dataset_id).unlink(missing_ok=True)
                raise
            cat.close()
            ds_conn.close()
            self._bump_change_counter()
            return refs

    def _ingest_file(self, ds_conn, cat, f: Path, dataset_id: str) -> TableRef:
        table_id = re.sub(r"[^A-Za-z0-9_]", "_", f.stem).lower().strip("_") or "table"
        if not _IDENT_RE.match(table_id):
            table_id = "t_" + table_id
        existing = cat.execute("SELECT 1 FROM _tables WHERE table_id=?", (table_id,)).fetchone()
        if existing:
            raise DuplicateTableId(f"table_id already registered corpus-wide: {table_id}")

        if f.suffix.lower() == ".parquet":
            columns, types, row_iter = self._read_parquet(f)
        else:
            columns, types, row_iter = self._read_csv(f)

        cols_sql = ", ".join(
            f"{quote_ident(c)} {_STORAGE[t]}" for c, t in zip(columns, types)
        )
        ds_conn.execute(f"CREATE TABLE {quote_ident(table_id)} ({cols_sql})")
        placeholders = ",".join("?" * len(columns))
        insert = f"INSERT INTO {quote_ident(table_id)} VALUES ({placeholders})"
        count = 0
        batch: list[tuple] = []
        for row in row_iter:
            batch.append(tuple(coerce_value(v, t) for v, t in zip(row, types)))
            count += 1
            if len(batch) >= 50_000:
                ds_conn.executemany(insert, batch)
                batch = []
        if batch:
            ds_conn.executemany(insert, batch)

        cat.execute(
            "INSERT INTO _tables VALUES (?,?,?,?,?,?,?)",
            (
                table_id,
                dataset_id,
                "ingested",
                count,
                json.dumps(columns),
                json.dumps(types),
                str(f),
            ),
        )
        return TableRef(
            table_id=table_id,
            source="ingested",
            row_count=count,
            column_names=columns,
            column_types=types,
            dataset_id=dataset_id,
        )

    def _read_csv(self, f: Path):
        try:
            fh = open(f, newline="", encoding="utf-8-sig", errors="replace")
        except OSError as e:
            raise UnreadableFile(f"cannot open {f}: {e}")
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except (StopIteration, csv.Error):
            fh.close()
            raise UnreadableFile(f"empty or malformed CSV: {f}")
        columns = _dedupe_columns(header)
        ncols = len(columns)

        sample: list[list[str]] = []
        for row in reader:
            sample.append(row)
            if len(sample) >= 1000:
                break
        types = [
            infer_declared_type([r[i] if i < len(r) else "" for r in sample])
            for i in range(ncols)
        ]

        def rows():
            for r in sample:
                yield (r + [""] * ncols)[:ncols]
            for r in reader:
                yield (r + [""] * ncols)[:ncols]
            fh.close()

        return columns, types, rows()

    def _read_parquet(self, f: Path):
        import polars as pl

        try:
            frame = pl.read_parquet(f)
        except Exception as e:
            raise UnreadableFile(f"cannot read parquet {f}: {e}")
        columns = _dedupe_columns(list(frame.columns))
        types = []
        for dtype in frame.dtypes:
            if dtype in (pl.Int8, pl.Int16, pl.Int32, pl.Int64, pl.UInt8, pl.UInt16, pl.UInt32, pl.UInt64):
                types.append("integer")
            elif dtype in (pl.Float32, pl.Float64):
                types.append("real")
            elif dtype == pl.Boolean:
                types.append("boolean")
            elif dtype == pl.Date:
                types.append("date")
            elif isinstance(dtype, pl.Datetime) or dtype == pl.Datetime:
                types.append("timestamp")
            else:
                types.append("text")

        def rows():
            for row in frame.iter_rows():
                yield [
                    v.isoformat() if isinstance(v, (date, datetime)) else v for v in row
                ]

        return columns, types, rows()

    def _bump_change_counter(self) -> None:
        conn = self._catalog()
        try:
            conn.execute(
                "INSERT INTO _meta VALUES ('change_counter','1') "
                "ON CONFLICT(key) DO UPDATE SET value = CAST(value AS INTEGER) + 1"
            )
            conn.commit()
        finally:
            conn.close()

    # --- workspaces ------------------------------------------------------

    def create_workspace(self, workspace_id: str, attach: list[str] | None = None) -> Workspace:
        attach = list(attach or [])
        for ds in attach:
            if not self._dataset_path(ds).exists():
                raise TableNotFound(f"no such dataset: {ds}")
        ws = Workspace(workspace_id=workspace_id, attached_sources=attach)
        with self._lock(f"ws:{workspace_id}"):
            conn = sqlite3.connect(self.workspace_path(workspace_id))
            try:
                conn.execute(
                    "CREATE TABLE IF NOT EXISTS _ws_meta (key TEXT PRIMARY KEY, value TEXT)"
                )
                conn.execute(
                    """CREATE TABLE IF NOT EXISTS _ws_intermediates (
                        table_id TEXT PRIMARY KEY,
                        row_count INTEGER,
                        column_names TEXT,
                        column_types TEXT
                    )"""
                )
                conn.execute(
                    "CREATE TABLE IF NOT EXISTS _session_state (session_id TEXT PRIMARY KEY, state TEXT)"
                )
                conn.execute(
                    "INSERT OR REPLACE INTO _ws_meta VALUES ('attached', ?)",
                    (json.dumps(attach),),
                )
                conn.commit()
            finally:
                conn.close()
        return ws

    def load_workspace(self, workspace_id: str) -> Workspace:
        path = self.workspace_path(workspace_id)
        if not path.exists():
            raise TableNotFound(f"no such workspace: {workspace_id}")
        conn = sqlite3.connect(path)
        try:
            attached = json.loads(
                conn.execute("SELECT value FROM _ws_meta WHERE key='attached'").fetchone()[0]
            )
            inter = [
                r[0]
                for r in conn.execute(
                    "SELECT table_id FROM _ws_intermediates ORDER BY table_id"
                ).fetchall()
            ]
        finally:
            conn.close()
        return Workspace(workspace_id, attached, inter)

    def drop_workspace(self, ws: Workspace) -> None:
        # removes intermediates and session state; attached source data is untouched
        with self._lock(f"ws:{ws.workspace_id}"):
            self.workspace_path(ws.workspace_id).unlink(missing_ok=True)
        ws.intermediate_tables.clear()

    def _ws_conn(self, ws: Workspace, readonly: bool) -> sqlite3.Connection:
        conn = sqlite3.connect(self.workspace_path(ws.workspace_id), timeout=30, uri=True)
        conn.execute("PRAGMA busy_timeout=30000")
        conn.execute("PRAGMA cache_size=-65536")
        for i, ds in enumerate(ws.attached_sources):
            p = self._dataset_path(ds)
            if not p.exists():
                raise TableNotFound(f"no such dataset: {ds}")
            conn.execute(f"ATTACH DATABASE ? AS ds{i}", (f"file:{p}?mode=ro",))
        if readonly:
            conn.set_authorizer(_readonly_authorizer)
        return conn

    # --- querying --------------------------------------------------------

    def execute_query(
        self, ws: Workspace, query: str, row_limit: int | None = None
    ) -> ProbeResult:
        """Read-only query over the workspace's visible tables."""
        conn = self._ws_conn(ws, readonly=True)
        try:
            try:
                cur = conn.execute(query)
            except sqlite3.Error as e:
                raise _wrap_sql_error(e)
            columns = [d[0] for d in cur.description] if cur.description else []
            if row_limit is not None and row_limit >= 0:
                rows = cur.fetchmany(row_limit + 1)
                truncated = len(rows) > row_limit
                rows = rows[:row_limit]
                return ProbeResult(Relation(columns, [tuple(r) for r in rows]), truncated, row_limit)
            rows = cur.fetchall()
            return ProbeResult(Relation(columns, [tuple(r) for r in rows]), False, 0)
        finally:
            conn.close()

    def persist_as_table(self, ws: Workspace, query: str, new_table_id: str) -> TableRef:
        """Persist a SELECT's result as an intermediate table of this workspace."""
        if not _IDENT_RE.match(new_table_id):
            raise SqlError(f"invalid table identifier: {new_table_id!r}")
        with self._lock(f"ws:{ws.workspace_id}"):
            conn = self._ws_conn(ws, readonly=False)
            if self._intermediate_exists(conn, new_table_id) or self.has_table(new_table_id):
                conn.close()
                raise DuplicateTableId(f"table_id already in use: {new_table_id}")
            try:
                try:
                    conn.execute(f"CREATE TABLE {quote_ident(new_table_id)} AS {query}")
                except sqlite3.Error as e:
                    raise _wrap_sql_error(e)
                count = conn.execute(
                    f"SELECT count(*) FROM {quote_ident(new_table_id)}"
                ).fetchone()[0]
                info = conn.execute(
                    f"PRAGMA table_info({quote_ident(new_table_id)})"
                ).fetchall()
                columns = [r[1] for r in info]
                types = [_affinity_to_declared(r[2]) for r in info]
                conn.execute(
                    "INSERT INTO _ws_intermediates VALUES (?,?,?,?)",
                    (new_table_id, count, json.dumps(columns), json.dumps(types)),
                )
                conn.commit()
            except Exception:
                conn.execute(f"DROP TABLE IF EXISTS {quote_ident(new_table_id)}")
                conn.commit()
                conn.close()
                raise
            conn.close()
        ws.intermediate_tables.append(new_table_id)
        return TableRef(
            table_id=new_table_id,
            source="intermediate",
            row_count=count,
            column_names=columns,
            column_types=types,
            workspace_id=ws.workspace_id,
        )

    def persist_rows(
        self,
        ws: Workspace,
        new_table_id: str,
        columns: list[str],
        types: list[str],
        rows: list[tuple],
    ) -> TableRef:
        """Persist literal rows (used by semantic operators and the sandbox)."""
        if not _IDENT_RE.match(new_table_id):
            raise SqlError(f"invalid table identifier: {new_table_id!r}")
        with self._lock(f"ws:{ws.workspace_id}"):
            conn = self._ws_conn(ws, readonly=False)
            if self._intermediate_exists(conn, new_table_id) or self.has_table(new_table_id):
                conn.close()
                raise DuplicateTableId(f"table_id already in use: {new_table_id}")
            try:
                cols_sql = ", ".join(
                    f"{quote_ident(c)} {_STORAGE.get(t, 'TEXT')}"
                    for c, t in zip(columns, types)
                )
                conn.execute(f"CREATE TABLE {quote_ident(new_table_id)} ({cols_sql})")
                conn.executemany(
                    f"INSERT INTO {quote_ident(new_table_id)} VALUES ({','.join('?' * len(columns))})",
                    rows,
                )
                conn.execute(
                    "INSERT INTO _ws_intermediates VALUES (?,?,?,?)",
                    (new_table_id, len(rows), json.dumps(columns), json.dumps(types)),
                )
                conn.commit()
            finally:
                conn.close()
        ws.intermediate_tables.append(new_table_id)
        return TableRef(
            table_id=new_table_id,
            source="intermediate",
            row_count=len(rows),
            column_names=list(columns),
            column_types=list(types),
            workspace_id=ws.workspace_id,
        )

    # --- session state (persisted in the workspace database itself) -------

    def save_session_state(self, ws: Workspace, session_id: str, state: dict) -> None:
        with self._lock(f"ws:{ws.workspace_id}"):
            conn = sqlite3.connect(self.workspace_path(ws.workspace_id), timeout=30)
            try:
                conn.execute("PRAGMA busy_timeout=30000")
                conn.execute(
                    "INSERT OR REPLACE INTO _session_state VALUES (?, ?)",
                    (session_id, json.dumps(state, default=str)),
                )
                conn.commit()
            finally:
                conn.close()

    def load_session_state(self, workspace_id: str, session_id: str) -> dict | None:
        path = self.workspace_path(workspace_id)
        if not path.exists():
            return None
        conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
        try:
            row = conn.execute(
                "SELECT state FROM _session_state WHERE session_id=?", (session_id,)
            ).fetchone()
        except sqlite3.Error:
            return None
        finally:
            conn.close()
        return json.loads(row[0]) if row else None

    def list_workspaces(self) -> list[str]:
        out = []
        for p in sorted(self.root.glob("workspace-*.db")):
            out.append(p.stem.replace("workspace-", "", 1))
        return out

    def raw_executescript(self, ws: Workspace, sql_text: str) -> None:
        """Execute a multi-statement SQL block against the workspace (used by
        derivation replay; tables created here bypass the intermediate
        registry on purpose — replay only needs name resolution)."""
        with self._lock(f"ws:{ws.workspace_id}"):
            conn = self._ws_conn(ws, readonly=False)
            try:
                try:
                    conn.executescript(sql_text)
                    conn.commit()
                except sqlite3.Error as e:
                    raise _wrap_sql_error(e)
            finally:
                conn.close()

    @staticmethod
    def _intermediate_exists(conn: sqlite3.Connection, table_id: str) -> bool:
        row = conn.execute(
            "SELECT 1 FROM _ws_intermediates WHERE table_id=?", (table_id,)
        ).fetchone()
        return row is not None

    def intermediate_ref(self, ws: Workspace, table_id: str) -> TableRef:
        conn = sqlite3.connect(self.workspace_path(ws.workspace_id))
        try:
            row = conn.execute(
                "SELECT * FROM _ws_intermediates WHERE table_id=?", (table_id,)
            ).fetchone()
        finally:
            conn.close()
        if row is None:
            raise TableNotFound(f"no such intermediate table: {table_id}")
        return TableRef(
            table_id=row[0],
            source="intermediate",
            row_count=row[1],
            column_names=json.loads(row[2]),
            column_types=json.loads(row[3]),
            workspace_id=ws.workspace_id,
        )

    def visible_tables(self, ws: Workspace) -> dict[str, TableRef]:
        out: dict[str, TableRef] = {}
        for ds in ws.attached_sources:
            for ref in self.list_tables(ds):
                out[ref.table_id] = ref
        for tid in ws.intermediate_tables:
            out[tid] = self.intermediate_ref(ws, tid)
        return out

    def resolve_ref(self, ws: Workspace | None, table_id: str) -> TableRef:
        """Workspace intermediates shadow nothing: corpus ids are unique."""
        if ws is not None and table_id in ws.intermediate_tables:
            return self.intermediate_ref(ws, table_id)
        return self.get_table(table_id)

    # --- samples and scans -----------------------------------------------

    def sample_rows(self, t: TableRef | str, n: int, ws: Workspace | None = None) -> Relation:
        """First n rows in storage order: stable across calls on unchanged data."""
        if isinstance(t, str):
            t = self.resolve_ref(ws, t)
        if n < 0:
            raise ValueError("n must be >= 0")
        if t.source == "intermediate":
            if ws is None or t.workspace_id != ws.workspace_id:
                if t.workspace_id is None:
                    raise TableNotFound(f"intermediate table without workspace: {t.table_id}")
                ws = self.load_workspace(t.workspace_id)
            conn = sqlite3.connect(self.workspace_path(ws.workspace_id))
        else:
            if t.dataset_id is None or not self._dataset_path(t.dataset_id).exists():
                raise TableNotFound(f"no such table: {t.table_id}")
            conn = sqlite3.connect(
                f"file:{self._dataset_path(t.dataset_id)}?mode=ro", uri=True
            )
        try:
            try:
                cur = conn.execute(
                    f"SELECT * FROM {quote_ident(t.table_id)} ORDER BY rowid LIMIT ?",
                    (n,),
                )
            except sqlite3.Error as e:
                raise TableNotFound(f"no such table: {t.table_id}") from e
            columns = [d[0] for d in cur.description]
            return Relation(columns, [tuple(r) for r in cur.fetchall()])
        finally:
            conn.close()

    def content_scan(
        self, keywords: list[str], table_ids: list[str] | None = None
    ) -> ScanResult:
        """Per-(table, keyword) counts of matching cells and column names.

        Keywords are literal strings matched case-insensitively (ASCII); a
        list longer than MAX_SCAN_KEYWORDS is truncated with a warning flag.
        """
        if not keywords:
            raise ValueError("keywords must be non-empty")
        for kw in keywords:
            if not kw:
                raise ValueError("keywords must be non-empty strings")
            if len(kw) > MAX_KEYWORD_LEN:
                raise ValueError(f"keyword exceeds {MAX_KEYWORD_LEN} chars")
        truncated = len(keywords) > MAX_SCAN_KEYWORDS
        keywords = list(keywords[:MAX_SCAN_KEYWORDS])
        lowered = [k.lower() for k in keywords]

        refs = (
            [self.get_table(t) for t in table_ids]
            if table_ids is not None
            else self.list_tables()
        )
        counts: dict[str, dict[str, ScanCount]] = {}
        by_dataset: dict[str, list[TableRef]] = {}
        for ref in refs:
            by_dataset.setdefault(ref.dataset_id or "", []).append(ref)

        for dataset_id, group in sorted(by_dataset.items()):
            path = self._dataset_path(dataset_id)
            if not path.exists():
                raise TableNotFound(f"no such dataset: {dataset_id}")
            conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
            try:
                for ref in group:
                    counts[ref.table_id] = self._scan_table(conn, ref, keywords, lowered)
            finally:
                conn.close()
        return ScanResult(counts=counts, keywords=keywords, truncated_keywords=truncated)

    def _scan_table(
        self, conn, ref: TableRef, keywords: list[str], lowered: list[str]
    ) -> dict[str, ScanCount]:
        out = {
            kw: ScanCount(
                tf_colnames=sum(1 for c in ref.column_names if low in c.lower())
            )
            for kw, low in zip(keywords, lowered)
        }
        if not ref.column_names or ref.row_count == 0:
            return out
        sums = []
        for i in range(len(keywords)):
            cell_terms = " + ".join(
                f"(CASE WHEN instr(lower(CAST({quote_ident(c)} AS TEXT)), :k{i}) > 0 "
                "THEN 1 ELSE 0 END)"
                for c in ref.column_names
            )
            sums.append(f"SUM({cell_terms})")
        sql = f"SELECT {', '.join(sums)} FROM {quote_ident(ref.table_id)}"
        row = conn.execute(sql, {f"k{i}": low for i, low in enumerate(lowered)}).fetchone()
        for kw, total in zip(keywords, row):
            out[kw].tf_cells = int(total or 0)
        return out

    def enumerate_tables(self, pattern: str) -> list[TableRef]:
        """All corpus tables whose table_id fully matches, lexicographic order."""
        if len(pattern) > 512:
            raise InvalidPattern("pattern too long (max 512 chars)")
        try:
            rx = re.compile(pattern)
        except re.error as e:
            raise InvalidPattern(f"pattern does not compile: {e}")
        start = time.perf_counter()
        out: list[TableRef] = []
        for i, ref in enumerate(self.list_tables()):
            if i % 64 == 0 and time.perf_counter() - start > PATTERN_BUDGET_S:
                raise InvalidPattern("pattern scan exceeded 100 ms budget")
            if rx.fullmatch(ref.table_id):
                out.append(ref)
        return out


def _affinity_to_declared(affinity: str) -> str:
    a = (affinity or "").upper()
    if "INT" in a:
        return "integer"
    if "REAL" in a or "FLOA" in a or "DOUB" in a:
        return "real"
    return "text"


def _wrap_sql_error(e: sqlite3.Error) -> SqlError:
    msg = str(e)
    if "no such table" in msg:
        return TableNotVisible(msg)
    return SqlError(msg)


_ALLOWED_READ_OPS = {
    getattr(sqlite3, name)
    for name in ("SQLITE_SELECT", "SQLITE_READ", "SQLITE_FUNCTION", "SQLITE_RECURSIVE")
    if hasattr(sqlite3, name)
}


def _readonly_authorizer(action, *args):
    if action in _ALLOWED_READ_OPS:
        return sqlite3.SQLITE_OK
    return sqlite3.SQLITE_DENY
