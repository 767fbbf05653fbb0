"""Child process for sandboxed script execution. Not a public API.

Reads a JSON job from stdin, executes the program under restricted builtins
with the workspace database as its only I/O surface, and writes a JSON
report to stdout. Memory is capped via rlimit before the program runs.
"""

from __future__ import annotations

import io
import json
import sqlite3
import sys
import traceback

_IMPORT_WHITELIST = {
    "math",
    "statistics",
    "re",
    "json",
    "datetime",
    "itertools",
    "collections",
    "functools",
    "random",
}

_SAFE_BUILTIN_NAMES = [
    "abs", "all", "any", "bool", "bytes", "callable", "chr", "dict", "divmod",
    "enumerate", "filter", "float", "format", "frozenset", "getattr", "hasattr",
    "hash", "int", "isinstance", "issubclass", "iter", "len", "list", "map",
    "max", "min", "next", "ord", "pow", "range", "repr", "reversed", "round",
    "set", "setattr", "slice", "sorted", "str", "sum", "tuple", "type", "zip",
    "Exception", "ValueError", "TypeError", "KeyError", "IndexError",
    "AttributeError", "ZeroDivisionError", "ArithmeticError", "StopIteration",
    "RuntimeError", "OverflowError", "MemoryError",
]


def _make_import(allowed):
    real_import = __import__

    def guarded(name, globals=None, locals=None, fromlist=(), level=0):
        root = name.split(".")[0]
        if root not in allowed:
            raise ImportError(f"import of {name!r} is not permitted in the sandbox")
        return real_import(name, globals, locals, fromlist, level)

    return guarded


def main() -> int:
    job = json.loads(sys.stdin.read())
    try:
        import resource

        limit = job.get("memory_mb", 512) * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
    except (ImportError, ValueError, OSError):
        pass  # rlimit unsupported; wall-clock kill still applies

    conn = sqlite3.connect(job["workspace_path"], timeout=30)
    conn.execute("PRAGMA busy_timeout=30000")
    for alias, path in job.get("datasets", []):
        conn.execute(f"ATTACH DATABASE ? AS {alias}", (f"file:{path}?mode=ro",))

    reads: set[str] = set()
    writes: list[dict] = []
    reserved = set(job.get("reserved_ids", []))
    stdout_buf = io.StringIO()

    def _read_authorizer(action, arg1, arg2, dbname, trigger):
        if action == sqlite3.SQLITE_READ:
            if arg1 and not arg1.startswith(("sqlite_", "_ws_", "_session_")):
                reads.add(arg1)
            return sqlite3.SQLITE_OK
        if action in _ALLOWED:
            return sqlite3.SQLITE_OK
        return sqlite3.SQLITE_DENY

    _ALLOWED = {
        getattr(sqlite3, n)
        for n in ("SQLITE_SELECT", "SQLITE_FUNCTION", "SQLITE_RECURSIVE")
        if hasattr(sqlite3, n)
    }

    def _allow_all(*args):
        # set_authorizer(None) does not clear the hook on 3.10
        return sqlite3.SQLITE_OK

    def query(sql, limit=None):
        """Read-only query; returns a list of dict rows."""
        conn.set_authorizer(_read_authorizer)
        try:
            cur = conn.execute(sql)
            cols = [d[0] for d in cur.description] if cur.description else []
            rows = cur.fetchmany(limit) if limit else cur.fetchall()
            return [dict(zip(cols, r)) for r in rows]
        finally:
            conn.set_authorizer(_allow_all)

    def _quote(name):
        return '"' + str(name).replace('"', '""') + '"'

    def persist_rows(table_id, columns, rows):
        """Persist literal rows as a new intermediate table (one per script)."""
        if writes:
            raise RuntimeError("scripts may persist at most one table per execution")
        if not isinstance(table_id, str) or not table_id.isidentifier():
            raise ValueError(f"invalid table identifier: {table_id!r}")
        if table_id in reserved or table_id in reads:
            raise ValueError(f"table_id already in use: {table_id}")
        columns = [str(c) for c in columns]
        rows = [tuple(r) for r in rows]
        cols_sql = ", ".join(_quote(c) for c in columns)
        conn.execute(f"CREATE TABLE {_quote(table_id)} ({cols_sql})")
        if rows:
            conn.executemany(
                f"INSERT INTO {_quote(table_id)} VALUES ({','.join('?' * len(columns))})",
                rows,
            )
        types = ["text"] * len(columns)
        conn.execute(
            "INSERT INTO _ws_intermediates VALUES (?,?,?,?)",
            (table_id, len(rows), json.dumps(columns), json.dumps(types)),
        )
        conn.commit()
        writes.append({"table_id": table_id, "row_count": len(rows), "columns": columns, "types": types})
        return table_id

    def persist(table_id, sql):
        """Persist a SELECT's result as a new intermediate table."""
        if writes:
            raise RuntimeError("scripts may persist at most one table per execution")
        if not isinstance(table_id, str) or not table_id.isidentifier():
            raise ValueError(f"invalid table identifier: {table_id!r}")
        if table_id in reserved:
            raise ValueError(f"table_id already in use: {table_id}")
        conn.set_authorizer(_allow_all)
        conn.execute(f"CREATE TABLE {_quote(table_id)} AS {sql}")
        count = conn.execute(f"SELECT count(*) FROM {_quote(table_id)}").fetchone()[0]
        info = conn.execute(f"PRAGMA table_info({_quote(table_id)})").fetchall()
        columns = [r[1] for r in info]
        types = ["text"] * len(columns)
        conn.execute(
            "INSERT INTO _ws_intermediates VALUES (?,?,?,?)",
            (table_id, count, json.dumps(columns), json.dumps(types)),
        )
        conn.commit()
        writes.append({"table_id": table_id, "row_count": count, "columns": columns, "types": types})
        return table_id

    def sample(table_id, n):
        return query(f"SELECT * FROM {_quote(str(table_id))} ORDER BY rowid LIMIT {int(n)}")

    def _print(*args, **kwargs):
        kwargs.pop("file", None)
        print(*args, file=stdout_buf, **kwargs)

    builtins = {name: getattr(__builtins__, name, None) for name in _SAFE_BUILTIN_NAMES}
    if isinstance(__builtins__, dict):
        builtins = {name: __builtins__.get(name) for name in _SAFE_BUILTIN_NAMES}
    builtins["__import__"] = _make_import(_IMPORT_WHITELIST)
    builtins["__build_class__"] = (
        __builtins__["__build_class__"]
        if isinstance(__builtins__, dict)
        else __builtins__.__build_class__
    )
    builtins["print"] = _print

    env = {
        "__builtins__": builtins,
        "__name__": "__sandbox__",
        "query": query,
        "persist": persist,
        "persist_rows": persist_rows,
        "sample": sample,
    }

    report = {"ok": True, "error": None, "error_type": None, "result": None}
    try:
        exec(compile(job["program"], "<script>", "exec"), env)
        result = env.get("result")
        if result is not None:
            report["result"] = _normalize_result(result)
    except MemoryError:
        report.update(ok=False, error="script exceeded the memory budget", error_type="MemoryError")
    except BaseException as e:  # surface the message verbatim to the planner
        tb = traceback.format_exception_only(type(e), e)
        report.update(ok=False, error="".join(tb).strip(), error_type=type(e).__name__)
    finally:
        conn.close()

    report["reads"] = sorted(reads)
    report["writes"] = writes
    report["stdout"] = stdout_buf.getvalue()
    json.dump(report, sys.stdout, default=str)
    return 0


def _normalize_result(result):
    """Accept a list of dicts, a list of tuples + result_columns, or a scalar."""
    if isinstance(result, list) and result and isinstance(result[0], dict):
        columns = list(result[0].keys())
        return {"columns": columns, "rows": [[r.get(c) for c in columns] for r in result]}
    if isinstance(result, list):
        return {"columns": [f"c{i}" for i in range(len(result[0]) if result else 0)],
                "rows": [list(r) for r in result]}
    return {"columns": ["value"], "rows": [[result]]}


if __name__ == "__main__":
    sys.exit(main())
