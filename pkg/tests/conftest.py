from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tablescout import DBService, LMService, Retriever, ScriptedProvider


def plan(analysis: str, actions: list[dict]) -> str:
    """Render a structured planner reply."""
    return json.dumps({"analysis": analysis, "actions": actions})


def action(_kind: str, **params) -> dict:
    return {"kind": _kind, "params": params}


@pytest.fixture
def tmp_corpus(tmp_path):
    """Empty DBService rooted in a temp dir."""
    return DBService(tmp_path / "corpus")


@pytest.fixture
def scripted():
    provider = ScriptedProvider()
    return provider, LMService(provider)


@pytest.fixture
def small_db(tmp_path):
    """Three-table demo dataset used across modules."""
    src = tmp_path / "src"
    src.mkdir()
    (src / "people.csv").write_text(
        "person_id,name,city\n1,Ada,chicago\n2,Bo,boston\n3,Cy,chicago\n"
    )
    (src / "orders.csv").write_text(
        "order_id,person_id,total\n10,1,99.5\n11,1,12.0\n12,3,7.25\n13,9,1.0\n"
    )
    (src / "cities.csv").write_text("city,state\nchicago,IL\nboston,MA\n")
    db = DBService(tmp_path / "corpus")
    db.ingest_dataset(src, "demo")
    return db


@pytest.fixture
def small_runtime(small_db):
    """(db, provider, lm, retriever, workspace) over the demo dataset."""
    provider = ScriptedProvider()
    lm = LMService(provider)
    retriever = Retriever(small_db, lm, dataset_id="demo")
    retriever.build_index()
    ws = small_db.create_workspace("w_test", attach=["demo"])
    return small_db, provider, lm, retriever, ws
