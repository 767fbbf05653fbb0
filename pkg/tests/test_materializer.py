from __future__ import annotations

import json
import math
import random
from collections import Counter

import pytest

from conftest import action, plan
from corpusgen import random_table
from tablescout import DBService, LMService, Retriever, ScriptedProvider
from tablescout.errors import (
    ColumnNotFound,
    KeyNotFound,
    NonTextColumns,
    SchemaMismatch,
    TypeMismatch,
)
from tablescout.materializer import (
    Materializer,
    MaterializerTask,
    SemanticJoinConfig,
    trigram_jaccard,
    trigrams,
)
from tablescout.model import ColumnSpec, TargetModel, ViewSpec
from tablescout.provenance import ProvenanceGraph


@pytest.fixture
def mat(small_runtime):
    db, provider, lm, retriever, ws = small_runtime
    graph = ProvenanceGraph()
    m = Materializer(db, lm, retriever, ws, graph)
    return db, provider, lm, m, ws, graph


# --- oracles -----------------------------------------------------------------


def oracle_join(lcols, lrows, rcols, rrows, keys, join_type):
    """Nested-loop join mirroring the operator's column rule: all left
    columns, right columns minus key columns, collisions suffixed _r."""
    right_keys = {rk for _, rk in keys}
    out_names = list(lcols)
    taken = set(lcols)
    keep_right = []
    for i, c in enumerate(rcols):
        if c in right_keys:
            continue
        name = c if c not in taken else f"{c}_r"
        taken.add(name)
        out_names.append(name)
        keep_right.append(i)
    lkey_idx = [lcols.index(lk) for lk, _ in keys]
    rkey_idx = [rcols.index(rk) for _, rk in keys]
    rows = []
    for lrow in lrows:
        matched = False
        for rrow in rrows:
            if all(
                lrow[li] == rrow[ri] and lrow[li] is not None
                for li, ri in zip(lkey_idx, rkey_idx)
            ):
                rows.append(tuple(lrow) + tuple(rrow[i] for i in keep_right))
                matched = True
        if join_type == "left" and not matched:
            rows.append(tuple(lrow) + (None,) * len(keep_right))
    return out_names, rows


def multiset(rows):
    return Counter(tuple("\0" if v is None else str(v) for v in r) for r in rows)


# --- structured operators ------------------------------------------------------


def test_join_matches_nested_loop_oracle(mat):
    db, provider, lm, m, ws, graph = mat
    ref = m.op_join("people", "orders", [("person_id", "person_id")], "inner")
    lcols = ["person_id", "name", "city"]
    lrows = db.sample_rows("people", 100).rows
    rcols = ["order_id", "person_id", "total"]
    rrows = db.sample_rows("orders", 100).rows
    names, rows = oracle_join(lcols, lrows, rcols, rrows, [("person_id", "person_id")], "inner")
    got = db.execute_query(ws, f"SELECT * FROM {ref.table_id}").relation
    assert got.columns == names
    assert multiset(got.rows) == multiset(rows)


def test_join_empty_right(mat):
    db, provider, lm, m, ws, graph = mat
    db.persist_as_table(ws, "SELECT * FROM orders WHERE 1=0", "no_orders")
    ref = m.op_join("people", "no_orders", [("person_id", "person_id")], "inner")
    assert ref.row_count == 0


def test_join_key_not_found(mat):
    _, _, _, m, _, _ = mat
    with pytest.raises(KeyNotFound):
        m.op_join("people", "orders", [("person_id", "ghost_key")], "inner")


def test_join_type_mismatch(mat):
    _, _, _, m, _, _ = mat
    with pytest.raises(TypeMismatch):
        m.op_join("people", "orders", [("name", "total")], "inner")


def test_join_records_provenance(mat):
    db, provider, lm, m, ws, graph = mat
    ref = m.op_join("people", "orders", [("person_id", "person_id")], "inner")
    node = graph.producer_of(ref.table_id)
    assert node is not None and node.kind == "transformation"
    assert node.payload.startswith(f'CREATE TABLE "{ref.table_id}" AS SELECT')
    incoming = {a for a, b in graph.edges if b == node.node_id}
    assert incoming == {"src:people", "src:orders"}


def test_union_self_doubles(mat):
    db, provider, lm, m, ws, graph = mat
    ref = m.op_union(["people", "people"], "by_name")
    assert ref.row_count == 6  # duplicates preserved (UNION ALL)


def test_union_by_name_aligns_permuted_columns(mat):
    db, provider, lm, m, ws, graph = mat
    db.persist_as_table(ws, "SELECT city, name, person_id FROM people", "people_permuted")
    ref = m.op_union(["people", "people_permuted"], "by_name")
    got = db.execute_query(ws, f"SELECT * FROM {ref.table_id}").relation
    assert got.columns == ["person_id", "name", "city"]
    assert multiset(got.rows) == multiset(
        db.sample_rows("people", 10).rows * 2
    )


def test_union_by_position_arity_mismatch(mat):
    _, _, _, m, _, _ = mat
    with pytest.raises(SchemaMismatch):
        m.op_union(["people", "cities"], "by_position")


def test_union_requires_two_inputs(mat):
    _, _, _, m, _, _ = mat
    with pytest.raises(SchemaMismatch):
        m.op_union(["people"], "by_name")


def test_projection_identity(mat):
    db, provider, lm, m, ws, graph = mat
    ref = m.op_projection("people", ["person_id", "name", "city"])
    got = db.execute_query(ws, f"SELECT * FROM {ref.table_id}").relation
    assert got.columns == ["person_id", "name", "city"]
    assert multiset(got.rows) == multiset(db.sample_rows("people", 10).rows)


def test_projection_subset_and_rename(mat):
    db, provider, lm, m, ws, graph = mat
    ref = m.op_projection("people", ["name", "city"], renames={"city": "hometown"})
    got = db.execute_query(ws, f"SELECT * FROM {ref.table_id}").relation
    assert got.columns == ["name", "hometown"]
    assert len(got.columns) == 2


def test_projection_unknown_column(mat):
    _, _, _, m, _, _ = mat
    with pytest.raises(ColumnNotFound):
        m.op_projection("people", ["salary"])


def test_operator_equivalence_randomized(tmp_path):
    """op_* output equals brute-force oracles on randomized small tables."""
    rng = random.Random(202)
    db = DBService(tmp_path / "c")
    ws = db.create_workspace("w", attach=[])
    lm = LMService(ScriptedProvider())
    m = Materializer(db, lm, Retriever(db, lm), ws, ProvenanceGraph())
    for round_no in range(30):
        lcols, ltypes, lrows = random_table(rng, max_rows=60)
        rcols, rtypes, rrows = random_table(rng, max_rows=60)
        lt = db.persist_rows(ws, f"l_{round_no}", lcols, ltypes, lrows)
        rt = db.persist_rows(ws, f"r_{round_no}", rcols, rtypes, rrows)
        # join on a random type-compatible column pair
        pairs = [
            (lc, rc)
            for lc, t1 in zip(lcols, ltypes)
            for rc, t2 in zip(rcols, rtypes)
            if t1 == t2
        ]
        if pairs:
            keys = [rng.choice(pairs)]
            join_type = rng.choice(["inner", "left"])
            ref = m.op_join(lt.table_id, rt.table_id, keys, join_type)
            names, rows = oracle_join(lcols, lrows, rcols, rrows, keys, join_type)
            got = db.execute_query(ws, f'SELECT * FROM "{ref.table_id}"').relation
            assert got.columns == names
            assert multiset(got.rows) == multiset(rows)
        # union with itself, by position oracle = concatenation
        ref = m.op_union([lt.table_id, lt.table_id], "by_position")
        got = db.execute_query(ws, f'SELECT * FROM "{ref.table_id}"').relation
        assert multiset(got.rows) == multiset(lrows + lrows)
        # projection of a random column subset
        k = rng.randint(1, len(lcols))
        cols = rng.sample(lcols, k)
        ref = m.op_projection(lt.table_id, cols)
        idx = [lcols.index(c) for c in cols]
        expect = [tuple(r[i] for i in idx) for r in lrows]
        got = db.execute_query(ws, f'SELECT * FROM "{ref.table_id}"').relation
        assert multiset(got.rows) == multiset(expect)


# --- semantic join ------------------------------------------------------------------


def test_trigrams_definition():
    assert trigrams("abc") == {"abc"}
    assert trigrams("abcd") == {"abc", "bcd"}
    assert trigrams("AB") == {"ab"}
    assert trigrams("") == set()


def test_trigram_jaccard_oracle_values():
    # frozen from direct evaluation: 14 and 19 case-folded 3-grams, 11 shared,
    # 22 in the union -> 11/22 = 0.5
    a = trigrams("univ. of chicago")
    b = trigrams("university of chicago")
    assert (len(a), len(b), len(a & b), len(a | b)) == (14, 19, 11, 22)
    assert trigram_jaccard("Univ. of Chicago", "University of Chicago") == pytest.approx(0.5)
    assert trigram_jaccard("Univ. of Chicago", "Stanford University") == pytest.approx(
        2 / 29  # frozen: 2 shared grams ("ver" unshared; "uni","niv" shared), 29 union
    )
    assert trigram_jaccard("same", "same") == 1.0
    assert trigram_jaccard("abc", "xyz") == 0.0


def test_semantic_join_self_match(mat):
    db, provider, lm, m, ws, graph = mat
    db.persist_as_table(ws, "SELECT name FROM people", "names_l")
    db.persist_as_table(ws, "SELECT name FROM people", "names_r")
    cfg = SemanticJoinConfig(left_cols=["name"], right_cols=["name"], p=1, beta=0.7)
    ref = m.op_semantic_join("names_l", "names_r", cfg)
    got = db.execute_query(ws, f"SELECT * FROM {ref.table_id}").relation
    assert got.columns == ["name", "name_r", "match_score"]
    for row in got.rows:
        assert row[0] == row[1]
        assert row[2] == pytest.approx(1.0, abs=1e-9)


def test_semantic_join_beta_zero_trigram_ranking(mat):
    db, provider, lm, m, ws, graph = mat
    db.persist_rows(ws, "uni_l", ["inst"], ["text"], [("Univ. of Chicago",)])
    db.persist_rows(
        ws, "uni_r", ["inst_name"], ["text"],
        [("University of Chicago",), ("Stanford University",)],
    )
    cfg = SemanticJoinConfig(left_cols=["inst"], right_cols=["inst_name"], p=1, beta=0.0)
    ref = m.op_semantic_join("uni_l", "uni_r", cfg)
    got = db.execute_query(ws, f"SELECT * FROM {ref.table_id}").relation
    assert len(got.rows) == 1
    assert got.rows[0][1] == "University of Chicago"
    # oracle: the trigram similarity of the chosen pair beats the alternative
    assert trigram_jaccard("Univ. of Chicago", "University of Chicago") > trigram_jaccard(
        "Univ. of Chicago", "Stanford University"
    )


def test_semantic_join_p_capped_by_availability(mat):
    db, provider, lm, m, ws, graph = mat
    db.persist_rows(ws, "many_l", ["t"], ["text"], [("aa",), ("bb",)])
    db.persist_rows(ws, "one_r", ["t"], ["text"], [("aa",)])
    cfg = SemanticJoinConfig(left_cols=["t"], right_cols=["t"], p=2, beta=0.0)
    ref = m.op_semantic_join("many_l", "one_r", cfg)
    assert ref.row_count == 2  # one match per left tuple


def test_semantic_join_rejects_non_text(mat):
    _, _, _, m, _, _ = mat
    cfg = SemanticJoinConfig(left_cols=["person_id"], right_cols=["person_id"])
    with pytest.raises(NonTextColumns):
        m.op_semantic_join("people", "orders", cfg)


def test_semantic_join_embedding_failure_falls_back_to_syntactic(tmp_path):
    class FailingEmbeds(ScriptedProvider):
        def embed_raw(self, texts):
            from tablescout.errors import ProviderUnavailable

            raise ProviderUnavailable("down")

    db = DBService(tmp_path / "c")
    ws = db.create_workspace("w", attach=[])
    lm = LMService(FailingEmbeds())
    m = Materializer(db, lm, Retriever(db, lm), ws, ProvenanceGraph())
    db.persist_rows(ws, "l", ["t"], ["text"], [("chicago",)])
    db.persist_rows(ws, "r", ["t"], ["text"], [("chicago",), ("zurich",)])
    cfg = SemanticJoinConfig(left_cols=["t"], right_cols=["t"], p=1, beta=0.9)
    ref = m.op_semantic_join("l", "r", cfg)
    assert m.degraded
    got = db.execute_query(ws, f"SELECT * FROM {ref.table_id}").relation
    assert got.rows[0][1] == "chicago"


# --- semantic column ------------------------------------------------------------------


def test_semantic_column_scripted_values(mat):
    db, provider, lm, m, ws, graph = mat
    db.persist_rows(
        ws, "materials", ["category"], ["text"],
        [("radioactive",), ("paint",), ("uranium",), ("textile",)],
    )
    provider.push(json.dumps({"values": [True, False, True, False]}))
    ref = m.op_semantic_column(
        "materials",
        ColumnSpec("is_hazardous", "boolean", "hazard classification"),
        ["category"],
        "mark hazardous materials",
    )
    got = db.execute_query(ws, f"SELECT * FROM {ref.table_id}").relation
    assert got.columns == ["category", "is_hazardous", "is_hazardous_flag"]
    assert [r[1] for r in got.rows] == [1, 0, 1, 0]
    assert all(r[2] == 0 for r in got.rows)


def test_semantic_column_coercion_failure_flags_row(mat):
    db, provider, lm, m, ws, graph = mat
    db.persist_rows(ws, "rows2", ["x"], ["text"], [("a",), ("b",)])
    provider.push(json.dumps({"values": ["maybe", "true"]}))
    ref = m.op_semantic_column(
        "rows2", ColumnSpec("flag", "boolean", "a bool"), ["x"], "decide"
    )
    got = db.execute_query(ws, f"SELECT * FROM {ref.table_id}").relation
    assert got.rows[0][1] is None and got.rows[0][2] == 1  # null + flagged
    assert got.rows[1][1] == 1 and got.rows[1][2] == 0


def test_semantic_column_empty_table_no_completions(mat):
    db, provider, lm, m, ws, graph = mat
    db.persist_rows(ws, "none_t", ["x"], ["text"], [])
    ref = m.op_semantic_column(
        "none_t", ColumnSpec("y", "text", "derived"), ["x"], "whatever"
    )
    assert ref.row_count == 0
    assert ref.column_names == ["x", "y", "y_flag"]
    assert provider.calls == []  # zero completions issued


def test_semantic_column_batching(mat):
    db, provider, lm, m, ws, graph = mat
    rows = [(f"item{i}",) for i in range(5)]
    db.persist_rows(ws, "batched", ["x"], ["text"], rows)
    provider.push(json.dumps({"values": [1, 2]}))
    provider.push(json.dumps({"values": [3, 4]}))
    provider.push(json.dumps({"values": [5]}))
    ref = m.op_semantic_column(
        "batched", ColumnSpec("n", "integer", "number"), ["x"], "count", batch_size=2
    )
    got = db.execute_query(ws, f"SELECT n FROM {ref.table_id}").relation
    assert [r[0] for r in got.rows] == [1, 2, 3, 4, 5]


# --- free-form fallbacks ----------------------------------------------------------------


def test_query_exec_provenance_single_edge(mat):
    db, provider, lm, m, ws, graph = mat
    ref = m.op_query_exec("SELECT city, count(*) AS n FROM people GROUP BY city", persist_as="by_city")
    node = graph.producer_of("by_city")
    incoming = [(a, b) for a, b in graph.edges if b == node.node_id]
    assert len(incoming) == 1
    assert incoming[0][0] == "src:people"


def test_query_exec_read_only_probe(mat):
    db, provider, lm, m, ws, graph = mat
    res = m.op_query_exec("SELECT count(*) FROM orders")
    assert res.relation.rows == [(4,)]
    assert graph.nodes == {}  # probes add no provenance


def test_script_exec_persists_and_records(mat):
    db, provider, lm, m, ws, graph = mat
    outcome = m.op_script_exec(
        "rows = query('SELECT total FROM orders')\n"
        "persist_rows('big_orders', ['total'], [[r['total']] for r in rows if r['total'] > 10])\n"
    )
    assert outcome.writes[0]["table_id"] == "big_orders"
    node = graph.producer_of("big_orders")
    assert node.payload_kind == "python"
    got = db.execute_query(ws, "SELECT count(*) FROM big_orders").relation.rows[0][0]
    # oracle: recompute the aggregate directly
    oracle = db.execute_query(ws, "SELECT count(*) FROM orders WHERE total > 10").relation.rows[0][0]
    assert got == oracle == 2


# --- the bounded loop -----------------------------------------------------------------


def _task(*views: ViewSpec, guidance=None) -> MaterializerTask:
    return MaterializerTask(target=TargetModel(views=views), guidance=guidance)


def _declared(view_id: str, *cols: str) -> ViewSpec:
    return ViewSpec(
        view_id=view_id,
        columns=tuple(ColumnSpec(c, "text", f"col {c}") for c in cols),
    )


def test_materialize_single_iteration_union(mat):
    db, provider, lm, m, ws, graph = mat
    provider.push(
        plan(
            "union people with itself",
            [action("union", inputs=["people", "people"], mode="by_name", bind_view="everyone")],
        )
    )
    result = m.materialize(_task(_declared("everyone", "name", "city")))
    assert result.complete
    assert result.iterations == 1
    view = result.views[0]
    assert view.status == "materialized"
    assert db.resolve_ref(ws, view.materialized_ref).row_count == 6


def test_materialize_error_recovery_second_iteration(mat):
    db, provider, lm, m, ws, graph = mat
    provider.push(
        plan(
            "try a broken query first",
            [
                action("query_exec", sql="SELEC oops", persist_as="v_try"),
                action("query_exec", sql="SELECT 1", persist_as="never_runs"),
            ],
        )
    )
    provider.push(
        plan(
            "fix the typo",
            [action("query_exec", sql="SELECT name FROM people", persist_as="v_fixed", bind_view="v")],
        ),
    )
    result = m.materialize(_task(_declared("v", "name")))
    assert result.complete
    assert result.iterations == 2
    # aborted remainder: the second action of iteration 1 never ran
    assert graph.producer_of("never_runs") is None
    # provenance contains only the successful transformation
    tx_nodes = [n for n in graph.nodes.values() if n.kind == "transformation"]
    assert [n.output_ref for n in tx_nodes] == ["v_fixed"]
    errors = [r for r in result.records if r.error]
    assert len(errors) == 1 and "syntax error" in errors[0].error


def test_materialize_budget_exhausted(mat):
    db, provider, lm, m, ws, graph = mat
    # records grow by 2 per iteration; once they exceed 10 the planner issues
    # one summarization completion, so the FIFO order is 6 plans, the summary,
    # then the remaining plans
    for _ in range(6):
        provider.push(plan("dither", [action("context_extract", probes=[])]))
    provider.push("summary of earlier dithering")
    for _ in range(4):
        provider.push(plan("dither", [action("context_extract", probes=[])]))
    result = m.materialize(_task(_declared("never", "x")), m_max=10)
    assert not result.complete
    assert result.iterations == 10
    assert "never" in result.error
    analyses = [r for r in result.records if r.kind == "situational_analysis"]
    assert len(analyses) == 10  # exactly one situational analysis per iteration


def test_bind_view_schema_superset_enforced(mat):
    db, provider, lm, m, ws, graph = mat
    provider.push(
        plan(
            "bind a table missing a declared column",
            [action("projection", input="people", columns=["name"], bind_view="needs_city")],
        )
    )
    provider.push(
        plan(
            "bind the right shape",
            [action("projection", input="people", columns=["name", "city"], bind_view="needs_city")],
        )
    )
    result = m.materialize(_task(_declared("needs_city", "name", "city")))
    assert result.complete
    errors = [r for r in result.records if r.error]
    assert any("missing declared columns" in (r.error or "") for r in errors)


def test_task_requires_declared_view():
    done = ViewSpec(view_id="v", status="materialized", materialized_ref="t")
    with pytest.raises(ValueError):
        MaterializerTask(target=TargetModel(views=(done,)))


def test_prompt_ranks_operators_before_free_form():
    from tablescout.planning import MATERIALIZER_CATALOG

    text = MATERIALIZER_CATALOG
    for op in ["join", "union", "projection", "semantic_join", "semantic_column"]:
        assert text.index(f"- {op}:") < text.index("- query_exec:")
    assert text.index("- query_exec:") < text.index("- script_exec:")
