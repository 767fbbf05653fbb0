"""Prompt construction and action records shared by both planners.

Both planners run bounded loops: each iteration starts with one structured
completion whose ``analysis`` field is the situational analysis and whose
``actions`` list is executed in order, aborting the remainder on the first
error. The materializer's catalog deliberately lists structured operators
before the free-form query/script fallbacks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .llm import ChatMessage

RECENT_RECORDS = 10  # action records included verbatim in a planner prompt


@dataclass
class ActionRecord:
    kind: str
    params: dict = field(default_factory=dict)
    outcome: str = ""
    error: str | None = None
    iteration: int = 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params,
            "outcome": self.outcome,
            "error": self.error,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActionRecord":
        return cls(
            kind=d["kind"],
            params=d.get("params", {}),
            outcome=d.get("outcome", ""),
            error=d.get("error"),
            iteration=d.get("iteration", 0),
        )

    def render(self) -> str:
        line = f"[{self.iteration}] {self.kind}"
        if self.params:
            line += f" {json.dumps(self.params, default=str)[:400]}"
        if self.error:
            line += f" -> ERROR: {self.error}"
        elif self.outcome:
            line += f" -> {self.outcome[:400]}"
        return line


MATERIALIZER_CATALOG = """Available actions, in order of preference:
- join: {left, right, keys: [[left_col, right_col]...], join_type: inner|left, as?, bind_view?}
- union: {inputs: [table...], mode: by_name|by_position, as?, bind_view?}
- projection: {input, columns: [...], renames?: {old: new}, as?, bind_view?}
- semantic_join: {left, right, left_cols: [...], right_cols: [...], p?, beta?, as?, bind_view?}
- semantic_column: {input, new_column: {name, declared_type, description}, condition_columns: [...], instruction, batch_size?, as?, bind_view?}
- retrieve: {queries: ["..."]} or {text, k?}
- enumerate: {pattern}
- context_extract: {probes: [{purpose, query}...]}
- query_exec: {sql, persist_as?, bind_view?}   (free-form SQL; prefer the operators above)
- script_exec: {program, bind_view?}           (free-form Python; last resort)
Prefer structured operators over free-form query_exec/script_exec: they are
less error-prone and cheaper to verify."""

CONDUCTOR_CATALOG = """Available actions:
- retrieve: {queries: ["..."]} or {text, k?}
- enumerate: {pattern}
- context_extract: {probes: [{purpose, query}...]}
- model_update: {add_views?: [{view_id, columns:[{name, declared_type, description}...]}...], remove_views?: [...], modify_views?: [...], set_transformation?: {kind: sql|script, body, declared_inputs: [...]}}
- materialize: {guidance?}
- executor: {}
- user_communicate: {content, kind: answer|question, answer?}   (terminates the turn)"""


def _render_records(records: list[ActionRecord]) -> str:
    if not records:
        return "(none yet)"
    return "\n".join(r.render() for r in records[-RECENT_RECORDS:])


def _render_context(shared_context: list) -> str:
    if not shared_context:
        return "(none)"
    lines = []
    for rr in shared_context:
        for ranked in rr.ranked:
            lines.append(f"- {ranked.table_id} (score {ranked.fused_score:.3f})")
    return "\n".join(lines) if lines else "(none)"


def materializer_messages(
    views_block: str,
    guidance: str | None,
    shared_context: list,
    records: list[ActionRecord],
    older_summary: str | None,
    last_error: str | None,
    iteration: int,
    m_max: int,
) -> list[ChatMessage]:
    system = (
        "You are the materializer: construct the declared target views from "
        "the corpus using the fewest reliable actions. Begin with a situational "
        "analysis, then list the actions for this iteration.\n\n"
        + MATERIALIZER_CATALOG
        + '\n\nReply as JSON: {"analysis": "...", "actions": [{"kind": "...", "params": {...}}]}'
    )
    user = [
        f"Iteration {iteration} of {m_max}.",
        f"Target views:\n{views_block}",
    ]
    if guidance:
        user.append(f"Guidance from the conductor: {guidance}")
    user.append(f"Retrieved tables:\n{_render_context(shared_context)}")
    if older_summary:
        user.append(f"Summary of earlier actions:\n{older_summary}")
    user.append(f"Recent actions:\n{_render_records(records)}")
    if last_error:
        user.append(f"The previous action failed with: {last_error}\nRecover from it.")
    return [ChatMessage("system", system), ChatMessage("user", "\n\n".join(user))]


def conductor_messages(
    need_text: str,
    model_block: str,
    records: list[ActionRecord],
    older_summary: str | None,
    probe_notes: list[str],
    last_error: str | None,
    iteration: int,
    c_max: int,
    direct_synthesis: bool,
) -> list[ChatMessage]:
    mode = (
        "Direct-synthesis mode: model_update, materialize, and executor are "
        "disabled; answer from retrieval and probes alone."
        if direct_synthesis
        else "Refine the target model until it answers the need, materialize "
        "it, execute the transformation, then communicate."
    )
    system = (
        "You are the conductor: plan the session that turns the user's "
        "information need into an inspectable answer relation. Begin each "
        "iteration with a situational analysis, then list the actions to "
        f"take. {mode}\n\n"
        + CONDUCTOR_CATALOG
        + '\n\nReply as JSON: {"analysis": "...", "actions": [{"kind": "...", "params": {...}}]}'
    )
    user = [
        f"Iteration {iteration} of {c_max}.",
        f"Information need: {need_text}",
        f"Current target model:\n{model_block}",
    ]
    if probe_notes:
        user.append("Probe findings:\n" + "\n".join(probe_notes))
    if older_summary:
        user.append(f"Summary of earlier actions:\n{older_summary}")
    user.append(f"Recent actions:\n{_render_records(records)}")
    if last_error:
        user.append(f"The previous action failed with: {last_error}\nRecover from it.")
    return [ChatMessage("system", system), ChatMessage("user", "\n\n".join(user))]


def forced_synthesis_messages(
    need_text: str, model_block: str, unmaterialized: list[str], records: list[ActionRecord]
) -> list[ChatMessage]:
    system = (
        "The iteration budget is exhausted. Synthesize the best possible "
        "user-facing response from the work done so far, stating clearly "
        "what remains unfinished."
    )
    user = [
        f"Information need: {need_text}",
        f"Target model:\n{model_block}",
        f"Unmaterialized views: {', '.join(unmaterialized) if unmaterialized else '(none)'}",
        f"Actions taken:\n{_render_records(records)}",
    ]
    return [ChatMessage("system", system), ChatMessage("user", "\n\n".join(user))]


def summarize_messages(records: list[ActionRecord]) -> list[ChatMessage]:
    body = "\n".join(r.render() for r in records)
    return [
        ChatMessage("system", "Summarize these planner actions in a few sentences."),
        ChatMessage("user", body),
    ]
