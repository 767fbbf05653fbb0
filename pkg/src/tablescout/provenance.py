"""Provenance DAG and derivation-script emission.

Nodes are source tables or transformations; edges are data dependencies.
Topologically sorting the transformations (ties broken by node_id) and
appending the final transformation yields a single plain-text script that
replays the whole derivation from the source tables alone.

Script format: each step is introduced by a ``-- step N: <node_id> ->
<output>`` marker line; Python payloads are fenced between ``-- BEGIN
PYTHON`` / ``-- END PYTHON`` markers, everything else is SQL. The final
transformation is introduced by ``-- final transformation (sql|script)``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .errors import CycleDetected, MissingInput
from .model import TransformationS

PY_BEGIN = "-- BEGIN PYTHON"
PY_END = "-- END PYTHON"


@dataclass(frozen=True)
class ProvenanceNode:
    node_id: str
    kind: str  # source_table | transformation
    label: str = ""
    payload: str = ""           # exact operator call / program text executed
    payload_kind: str = "sql"   # sql | python (how to replay the payload)
    output_ref: str | None = None

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "kind": self.kind,
            "label": self.label,
            "payload": self.payload,
            "payload_kind": self.payload_kind,
            "output_ref": self.output_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProvenanceNode":
        return cls(
            node_id=d["node_id"],
            kind=d["kind"],
            label=d.get("label", ""),
            payload=d.get("payload", ""),
            payload_kind=d.get("payload_kind", "sql"),
            output_ref=d.get("output_ref"),
        )


@dataclass
class ProvenanceGraph:
    nodes: dict[str, ProvenanceNode] = field(default_factory=dict)
    edges: set[tuple[str, str]] = field(default_factory=set)

    def add_node(self, node: ProvenanceNode) -> ProvenanceNode:
        self.nodes[node.node_id] = node
        return node

    def add_edge(self, from_id: str, to_id: str) -> None:
        if from_id not in self.nodes or to_id not in self.nodes:
            raise MissingInput(f"edge references unknown node: {from_id} -> {to_id}")
        if self.nodes[to_id].kind == "source_table":
            raise CycleDetected(f"source_table node {to_id!r} cannot have incoming edges")
        self.edges.add((from_id, to_id))
        if self._has_cycle():
            self.edges.discard((from_id, to_id))
            raise CycleDetected(f"edge {from_id} -> {to_id} would create a cycle")

    def _has_cycle(self) -> bool:
        try:
            self.topological_order()
        except CycleDetected:
            return True
        return False

    def topological_order(self) -> list[str]:
        """Kahn's algorithm with a heap frontier: the unique lexicographically
        smallest topological order, so emission is deterministic."""
        indeg = {nid: 0 for nid in self.nodes}
        out: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        for a, b in self.edges:
            indeg[b] += 1
            out[a].append(b)
        frontier = [nid for nid, d in indeg.items() if d == 0]
        heapq.heapify(frontier)
        order: list[str] = []
        while frontier:
            nid = heapq.heappop(frontier)
            order.append(nid)
            for nxt in out[nid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    heapq.heappush(frontier, nxt)
        if len(order) != len(self.nodes):
            raise CycleDetected("provenance graph contains a cycle")
        return order

    def producer_of(self, table_id: str) -> ProvenanceNode | None:
        for node in self.nodes.values():
            if node.output_ref == table_id:
                return node
        return None

    def unreachable_transformations(self) -> list[str]:
        """Transformation nodes not reachable from any source_table node."""
        reached = {n.node_id for n in self.nodes.values() if n.kind == "source_table"}
        changed = True
        while changed:
            changed = False
            for a, b in self.edges:
                if a in reached and b not in reached:
                    reached.add(b)
                    changed = True
        return sorted(
            n.node_id
            for n in self.nodes.values()
            if n.kind == "transformation" and n.node_id not in reached
        )

    def to_dict(self) -> dict:
        return {
            "nodes": [self.nodes[nid].to_dict() for nid in sorted(self.nodes)],
            "edges": sorted([list(e) for e in self.edges]),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProvenanceGraph":
        g = cls()
        for nd in d.get("nodes", []):
            g.add_node(ProvenanceNode.from_dict(nd))
        for a, b in d.get("edges", []):
            g.edges.add((a, b))
        return g


def _fence(payload: str, payload_kind: str) -> str:
    text = payload.rstrip("\n")
    if payload_kind == "python":
        return f"{PY_BEGIN}\n{text}\n{PY_END}"
    return text if text.endswith(";") else text + ";"


def derivation_script(g: ProvenanceGraph, s: TransformationS) -> str:
    """Emit the single replayable script: transformations in topological
    order (node_id tie-break), then the final transformation."""
    order = g.topological_order()  # raises CycleDetected
    produced = {n.output_ref for n in g.nodes.values() if n.output_ref}
    sources = sorted(
        n.output_ref or n.node_id for n in g.nodes.values() if n.kind == "source_table"
    )
    for inp in s.declared_inputs:
        if inp not in produced and inp not in sources:
            raise MissingInput(f"transformation input {inp!r} is produced by no node")

    lines = ["-- derivation script"]
    lines.append(f"-- sources: {', '.join(sources) if sources else '(none)'}")
    step = 0
    for nid in order:
        node = g.nodes[nid]
        if node.kind != "transformation":
            continue
        step += 1
        lines.append("")
        lines.append(f"-- step {step}: {node.node_id} -> {node.output_ref or '(none)'}")
        lines.append(_fence(node.payload, node.payload_kind))
    lines.append("")
    lines.append(f"-- final transformation ({s.kind})")
    if s.kind == "script":
        lines.append(_fence(s.body, "python"))
    else:
        lines.append(s.body.rstrip("\n"))
    lines.append("")
    return "\n".join(lines)


@dataclass
class ScriptStep:
    marker: str        # the "-- step ..." / "-- final ..." line
    payload: str
    payload_kind: str  # sql | python
    is_final: bool


def parse_derivation_script(text: str) -> list[ScriptStep]:
    """Split a derivation script back into replayable steps."""
    steps: list[ScriptStep] = []
    current: ScriptStep | None = None
    in_python = False
    buf: list[str] = []

    def flush():
        nonlocal current, buf
        if current is not None:
            current.payload = "\n".join(buf).strip("\n")
            steps.append(current)
        current, buf = None, []

    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("-- step ") or stripped.startswith("-- final transformation"):
            flush()
            current = ScriptStep(
                marker=stripped,
                payload="",
                payload_kind="sql",
                is_final=stripped.startswith("-- final"),
            )
            in_python = False
        elif stripped == PY_BEGIN and current is not None:
            current.payload_kind = "python"
            in_python = True
        elif stripped == PY_END:
            in_python = False
        elif current is not None:
            if in_python or (stripped and not stripped.startswith("-- ")):
                buf.append(line)
    flush()
    return steps
