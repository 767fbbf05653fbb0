from __future__ import annotations

import pytest

from tablescout.errors import BudgetExceeded, ScriptError
from tablescout.sandbox import run_script


@pytest.fixture
def ws(small_db):
    return small_db.create_workspace("sandbox_ws", attach=["demo"])


def test_query_and_result(small_db, ws):
    out = run_script(
        small_db,
        ws,
        "rows = query('SELECT name FROM people ORDER BY person_id')\nresult = rows\n",
    )
    assert out.result.columns == ["name"]
    assert out.result.rows == [("Ada",), ("Bo",), ("Cy",)]
    assert out.reads == ["people"]


def test_persist_rows_roundtrip(small_db, ws):
    out = run_script(
        small_db,
        ws,
        "persist_rows('doubles', ['n'], [[i * 2] for i in range(4)])\n",
    )
    assert out.writes[0]["table_id"] == "doubles"
    got = small_db.execute_query(ws, "SELECT n FROM doubles ORDER BY n")
    assert got.relation.rows == [(0,), (2,), (4,), (6,)]
    assert "doubles" in ws.intermediate_tables


def test_file_access_denied(small_db, ws):
    with pytest.raises(ScriptError) as exc:
        run_script(small_db, ws, "open('/etc/passwd')")
    assert "open" in str(exc.value)


def test_import_whitelist(small_db, ws):
    out = run_script(small_db, ws, "import math\nresult = math.floor(2.9)\n")
    assert out.result.rows == [(2,)]
    with pytest.raises(ScriptError) as exc:
        run_script(small_db, ws, "import os")
    assert "not permitted" in str(exc.value)
    with pytest.raises(ScriptError):
        run_script(small_db, ws, "import socket")


def test_error_message_verbatim(small_db, ws):
    with pytest.raises(ScriptError) as exc:
        run_script(small_db, ws, "result = 1 / 0")
    assert "ZeroDivisionError" in str(exc.value)


def test_wall_clock_budget(small_db, ws):
    with pytest.raises(BudgetExceeded):
        run_script(
            small_db,
            ws,
            "x = 0\nwhile True:\n    x += 1\n",
            wall_budget_s=1.0,
        )


def test_memory_budget(small_db, ws):
    with pytest.raises(BudgetExceeded):
        run_script(small_db, ws, "blob = bytes(600 * 1024 * 1024)")


def test_one_persist_per_script(small_db, ws):
    with pytest.raises(ScriptError) as exc:
        run_script(
            small_db,
            ws,
            "persist_rows('one_t', ['a'], [[1]])\npersist_rows('two_t', ['a'], [[2]])\n",
        )
    assert "at most one table" in str(exc.value)


def test_print_captured(small_db, ws):
    out = run_script(small_db, ws, "print('hello from the box')\nresult = 1\n")
    assert "hello from the box" in out.stdout


def test_read_only_query_surface(small_db, ws):
    with pytest.raises(ScriptError):
        run_script(small_db, ws, "query('DROP TABLE people')")


def test_scalar_result_normalized(small_db, ws):
    out = run_script(small_db, ws, "result = 41 + 1")
    assert out.result.columns == ["value"]
    assert out.result.rows == [(42,)]


def test_sample_helper(small_db, ws):
    out = run_script(small_db, ws, "result = sample('orders', 2)")
    assert len(out.result.rows) == 2
