from __future__ import annotations

import json

import numpy as np
import pytest

from tablescout.errors import ProviderUnavailable, ScriptMismatch, StructureValidationFailed
from tablescout.llm import (
    ChatMessage,
    ChatRequest,
    LMService,
    ScriptedProvider,
    UsageRecord,
    hash_embedding,
)


def _req(user: str, structured: bool = False, schema: str | None = None) -> ChatRequest:
    return ChatRequest(
        messages=[ChatMessage("system", "sys"), ChatMessage("user", user)],
        response_format="structured" if structured else "free_text",
        structure_schema=schema,
    )


def test_request_requires_system_first():
    with pytest.raises(ValueError):
        ChatRequest(messages=[ChatMessage("user", "hi")])
    with pytest.raises(ValueError):
        ChatRequest(messages=[])


def test_scripted_echo(scripted):
    provider, lm = scripted
    provider.push("OK")
    assert lm.complete(_req("hello")).text == "OK"


def test_empty_queue_is_provider_unavailable(scripted):
    _, lm = scripted
    with pytest.raises(ProviderUnavailable):
        lm.complete(_req("hello"))


def test_expect_gate_mismatch_is_hard_failure(scripted):
    provider, lm = scripted
    provider.push("nope", expect="magic words")
    with pytest.raises(ScriptMismatch):
        lm.complete(_req("different message"))


def test_expect_gate_match(scripted):
    provider, lm = scripted
    provider.push("yes", expect="magic")
    assert lm.complete(_req("some magic here")).text == "yes"


def test_structured_retry_then_success(scripted):
    provider, lm = scripted
    provider.push("this is not json at all {")
    provider.push(json.dumps({"analysis": "ok", "actions": []}))
    res = lm.complete(_req("plan please", structured=True, schema="plan"))
    assert res.retry_count == 1
    assert res.parsed["analysis"] == "ok"


def test_structured_fails_after_retries(scripted):
    provider, lm = scripted
    for _ in range(3):
        provider.push("still not json")
    with pytest.raises(StructureValidationFailed):
        lm.complete(_req("plan please", structured=True, schema="plan"))


def test_structured_schema_violation_retries(scripted):
    provider, lm = scripted
    provider.push(json.dumps({"analysis": "missing actions"}))
    provider.push(json.dumps({"analysis": "ok", "actions": [{"kind": "retrieve"}]}))
    res = lm.complete(_req("x", structured=True, schema="plan"))
    assert res.retry_count == 1
    assert res.parsed["actions"][0]["kind"] == "retrieve"


def test_structured_accepts_fenced_json(scripted):
    provider, lm = scripted
    provider.push('```json\n{"analysis": "a", "actions": []}\n```')
    res = lm.complete(_req("x", structured=True, schema="plan"))
    assert res.retry_count == 0


def test_unknown_schema_rejected(scripted):
    _, lm = scripted
    with pytest.raises(ValueError):
        lm.complete(_req("x", structured=True, schema="nonexistent"))


# --- embeddings -------------------------------------------------------------


def test_identical_strings_identical_vectors(scripted):
    _, lm = scripted
    a, b = lm.embed(["same text", "same text"])
    assert a.values == b.values


def test_embed_order_and_count(scripted):
    _, lm = scripted
    vs = lm.embed(["one", "two", "three"])
    assert len(vs) == 3
    assert len({len(v.values) for v in vs}) == 1  # one shared length per model


def test_self_cosine_is_one(scripted):
    _, lm = scripted
    (v,) = lm.embed(["cosine check"])
    arr = v.as_array()
    cos = float(arr @ arr / (np.linalg.norm(arr) ** 2))
    assert abs(cos - 1.0) < 1e-9


def test_token_overlap_beats_disjoint():
    q = hash_embedding("water testing lake")
    near = hash_embedding("lake water testing results")
    far = hash_embedding("zebra xylophone quartz")
    assert float(q @ near) > float(q @ far)


def test_embed_requires_texts(scripted):
    _, lm = scripted
    with pytest.raises(ValueError):
        lm.embed([])


# --- usage accounting ----------------------------------------------------------


def test_usage_totals_are_sum_of_calls(scripted):
    provider, lm = scripted
    provider.push("a" * 40)
    provider.push("b" * 80)
    lm.complete(_req("x" * 100))
    lm.complete(_req("y" * 100))
    lm.embed(["hello world"])
    totals = lm.totals
    assert totals.input_tokens == sum(u.input_tokens for u in lm.usage_records)
    assert totals.output_tokens == sum(u.output_tokens for u in lm.usage_records)
    assert totals.wall_time == pytest.approx(sum(u.wall_time for u in lm.usage_records))
    assert totals.input_tokens > 0 and totals.output_tokens > 0


def test_usage_record_add():
    a = UsageRecord(10, 5, 1.0)
    a.add(UsageRecord(3, 2, 0.5))
    assert (a.input_tokens, a.output_tokens, a.wall_time) == (13, 7, 1.5)
