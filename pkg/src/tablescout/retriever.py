"""Unified retrieval over the corpus.

Offline: one summary per table (schema rendering + sample rows), indexed
lexically (BM25) and by embedding. Online: hybrid summary retrieval via
reciprocal-rank fusion, entity extraction, a corpus-wide literal content
scan whose counts are damped by log(1+tf) and normalized per keyword, and
score fusion. Enumeration by full-match regex over table identifiers covers
table families that top-k retrieval under-retrieves.

Web search / web crawl / knowledge store are interface stubs only.
"""

from __future__ import annotations

import json
import math
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .db import DBService, ScanResult, TableRef
from .errors import (
    EmbeddingFailed,
    IndexEmpty,
    NotConfigured,
    ProviderUnavailable,
    ScriptMismatch,
    TableScoutError,
)
from .llm import ChatMessage, ChatRequest, EmbeddingVector, LMService

RRF_K = 60  # standard reciprocal-rank fusion constant
CANDIDATE_POOL_FACTOR = 4  # fusion pool = 4k summary candidates
MAX_ENTITIES = 8

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class _Bm25:
    """Okapi BM25 (k1=1.5, b=0.75) over pre-tokenized documents."""

    def __init__(self, docs: list[list[str]], k1: float = 1.5, b: float = 0.75):
        self.k1, self.b = k1, b
        self.doc_lens = [len(d) for d in docs]
        self.avg_len = (sum(self.doc_lens) / len(docs)) if docs else 0.0
        self.tfs: list[dict[str, int]] = []
        df: dict[str, int] = {}
        for doc in docs:
            tf: dict[str, int] = {}
            for tok in doc:
                tf[tok] = tf.get(tok, 0) + 1
            self.tfs.append(tf)
            for tok in tf:
                df[tok] = df.get(tok, 0) + 1
        n = len(docs)
        self.idf = {
            tok: math.log((n - d + 0.5) / (d + 0.5) + 1.0) for tok, d in df.items()
        }

    def scores(self, query_tokens: list[str]) -> np.ndarray:
        out = np.zeros(len(self.tfs))
        for i, tf in enumerate(self.tfs):
            dl = self.doc_lens[i]
            denom_base = self.k1 * (1 - self.b + self.b * dl / self.avg_len) if self.avg_len else self.k1
            s = 0.0
            for tok in query_tokens:
                f = tf.get(tok, 0)
                if f:
                    s += self.idf.get(tok, 0.0) * f * (self.k1 + 1) / (f + denom_base)
            out[i] = s
        return out


@dataclass
class TableSummary:
    table_id: str
    summary_text: str
    embedding: EmbeddingVector | None
    lexical_terms: list[str]

    def to_dict(self) -> dict:
        return {
            "table_id": self.table_id,
            "summary_text": self.summary_text,
            "embedding": list(self.embedding.values) if self.embedding else None,
            "embedding_model": self.embedding.model_id if self.embedding else None,
        }


@dataclass
class RetrievalQuery:
    text: str
    k: int = 10
    extracted_entities: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class RankedTable:
    table_id: str
    fused_score: float
    summary_score: float
    content_score: float

    def to_dict(self) -> dict:
        return {
            "table_id": self.table_id,
            "fused_score": self.fused_score,
            "summary_score": self.summary_score,
            "content_score": self.content_score,
        }


@dataclass
class RetrievalResult:
    ranked: list[RankedTable]

    def table_ids(self) -> list[str]:
        return [r.table_id for r in self.ranked]

    def to_dict(self) -> dict:
        return {"ranked": [r.to_dict() for r in self.ranked]}


@dataclass
class RetrieverConfig:
    k: int = 10
    q: int = 3              # max parallel retrieval queries per planner call
    s: int = 5              # sample rows per summary
    alpha: float = 0.5      # fusion weight: summary vs content
    w_col: float = 2.0      # column-name hit weight in tf_total


@dataclass
class RetrieverIndex:
    summaries: list[TableSummary]
    bm25: _Bm25
    emb_matrix: np.ndarray | None  # rows align with summaries
    degraded: bool = False

    def table_ids(self) -> list[str]:
        return [s.table_id for s in self.summaries]


def render_summary(ref: TableRef, sample_rows: list[tuple], s: int) -> str:
    cols = ", ".join(
        f"{name}:{typ}" for name, typ in zip(ref.column_names, ref.column_types)
    )
    text = f"table {ref.table_id} | columns: {cols}"
    rows = sample_rows[:s]
    if rows:
        rendered = " ; ".join(
            " | ".join("" if v is None else str(v) for v in row) for row in rows
        )
        text += f" | rows: {rendered}"
    return text


def content_score(
    entities: list[str], scan: ScanResult, w_col: float = 2.0
) -> dict[str, float]:
    """Per-table score in [0,1]: mean over keywords of damped, per-keyword
    max-normalized counts, damped = ln(1 + tf_cells + w_col*tf_colnames)."""
    tables = sorted(scan.counts)
    if not entities or not tables:
        return {t: 0.0 for t in tables}
    damped: dict[str, dict[str, float]] = {}
    for t in tables:
        damped[t] = {}
        for kw in entities:
            c = scan.counts[t].get(kw)
            tf_total = (c.tf_cells + w_col * c.tf_colnames) if c else 0.0
            damped[t][kw] = math.log1p(tf_total)
    out: dict[str, float] = {}
    for t in tables:
        acc = 0.0
        for kw in entities:
            mx = max(damped[x][kw] for x in tables)
            acc += damped[t][kw] / mx if mx > 0 else 0.0
        out[t] = acc / len(entities)
    return out


def heuristic_entities(text: str) -> list[str]:
    """Fallback when the provider fails: quoted spans, then runs of
    capitalized tokens, then standalone numbers."""
    out: list[str] = []
    for m in re.finditer(r"[\"'“‘]([^\"'”’]+)[\"'”’]", text):
        out.append(m.group(1).strip())
    for m in re.finditer(r"\b([A-Z][a-zA-Z]+(?:\s+[A-Z][a-zA-Z]+)+)\b", text):
        out.append(m.group(1))
    for m in re.finditer(r"\b(\d{4})\b", text):
        out.append(m.group(1))
    seen, dedup = set(), []
    for e in out:
        e = sanitize_entity(e)
        if e and e.lower() not in seen:
            seen.add(e.lower())
            dedup.append(e)
    return dedup[:MAX_ENTITIES]


def sanitize_entity(e: str) -> str:
    """Strip regex metacharacters: entities are literal substrings."""
    return re.sub(r"[\\^$.|?*+()\[\]{}]", "", e).strip()


class Retriever:
    """One instance per (corpus scope, session LM); index reads are
    concurrent-safe, rebuilds take the corpus lock."""

    def __init__(
        self,
        db: DBService,
        lm: LMService,
        cfg: RetrieverConfig | None = None,
        dataset_id: str | None = None,
    ):
        self.db = db
        self.lm = lm
        self.cfg = cfg or RetrieverConfig()
        self.dataset_id = dataset_id
        self.index: RetrieverIndex | None = None
        self._build_lock = threading.Lock()

    # --- offline stage ----------------------------------------------------

    def build_index(self, persist: bool = True) -> RetrieverIndex:
        with self._build_lock:
            corpus = self.db.list_tables(self.dataset_id)
            summaries: list[TableSummary] = []
            texts: list[str] = []
            for ref in corpus:
                sample = self.db.sample_rows(ref, self.cfg.s)
                text = render_summary(ref, sample.rows, self.cfg.s)
                texts.append(text)
                summaries.append(
                    TableSummary(
                        table_id=ref.table_id,
                        summary_text=text,
                        embedding=None,
                        lexical_terms=tokenize(text),
                    )
                )
            degraded = False
            emb_matrix = None
            if summaries:
                try:
                    vectors = self.lm.embed(texts)
                    for s, v in zip(summaries, vectors):
                        s.embedding = v
                    emb_matrix = np.stack([v.as_array() for v in vectors])
                except (ProviderUnavailable, EmbeddingFailed):
                    degraded = True  # lexical index still works
            self.index = RetrieverIndex(
                summaries=summaries,
                bm25=_Bm25([s.lexical_terms for s in summaries]),
                emb_matrix=emb_matrix,
                degraded=degraded,
            )
            if persist:
                self._persist_index()
            return self.index

    def _index_path(self) -> Path:
        name = f"retriever-index-{self.dataset_id or 'all'}.json"
        return self.db.root / name

    def _persist_index(self) -> None:
        assert self.index is not None
        payload = {
            "dataset_id": self.dataset_id,
            "degraded": self.index.degraded,
            "summaries": [s.to_dict() for s in self.index.summaries],
        }
        self._index_path().write_text(json.dumps(payload))

    def load_index(self) -> RetrieverIndex | None:
        path = self._index_path()
        if not path.exists():
            return None
        payload = json.loads(path.read_text())
        summaries = []
        vectors = []
        for d in payload["summaries"]:
            emb = None
            if d.get("embedding"):
                emb = EmbeddingVector(tuple(d["embedding"]), d.get("embedding_model", ""))
                vectors.append(emb.as_array())
            summaries.append(
                TableSummary(
                    table_id=d["table_id"],
                    summary_text=d["summary_text"],
                    embedding=emb,
                    lexical_terms=tokenize(d["summary_text"]),
                )
            )
        emb_matrix = np.stack(vectors) if vectors and len(vectors) == len(summaries) else None
        self.index = RetrieverIndex(
            summaries=summaries,
            bm25=_Bm25([s.lexical_terms for s in summaries]),
            emb_matrix=emb_matrix,
            degraded=payload.get("degraded", False),
        )
        return self.index

    def _require_index(self) -> RetrieverIndex:
        if self.index is None:
            self.load_index()
        if self.index is None or not self.index.summaries:
            raise IndexEmpty("retrieval index is empty — ingest and index a corpus first")
        return self.index

    # --- online stage -----------------------------------------------------

    def summary_retrieve(self, rq: RetrievalQuery) -> list[tuple[str, float]]:
        """Reciprocal-rank fusion of the lexical and embedding rankings over
        summary texts; returns the 4k-candidate pool for downstream fusion."""
        idx = self._require_index()
        n = len(idx.summaries)
        ids = idx.table_ids()

        lex = idx.bm25.scores(tokenize(rq.text))
        rankings = [_ranks(lex, ids)]
        if idx.emb_matrix is not None:
            qv = self.lm.embed([rq.text])[0].as_array()
            qn = np.linalg.norm(qv)
            mat = idx.emb_matrix
            norms = np.linalg.norm(mat, axis=1)
            denom = np.where(norms * qn > 0, norms * qn, 1.0)
            cos = (mat @ qv) / denom
            rankings.append(_ranks(cos, ids))

        rrf = np.zeros(n)
        for ranking in rankings:
            for i in range(n):
                rrf[i] += 1.0 / (RRF_K + ranking[i])
        order = sorted(range(n), key=lambda i: (-rrf[i], ids[i]))
        pool = order[: CANDIDATE_POOL_FACTOR * max(rq.k, 1)]
        return [(ids[i], float(rrf[i])) for i in pool]

    def extract_entities(self, rq: RetrievalQuery) -> list[str]:
        prompt = (
            "Extract entities from the question that are likely to appear "
            "verbatim in table cells or column names (names, places, categories, "
            "years). Reply as JSON: {\"entities\": [\"...\"]}.\n\n"
            f"Question: {rq.text}"
        )
        try:
            res = self.lm.complete(
                ChatRequest(
                    messages=[
                        ChatMessage("system", "You extract literal search strings."),
                        ChatMessage("user", prompt),
                    ],
                    response_format="structured",
                    structure_schema="entity_list",
                )
            )
            entities = [sanitize_entity(e) for e in res.parsed["entities"]]
            entities = [e for e in entities if e][:MAX_ENTITIES]
        except ScriptMismatch:
            raise
        except (TableScoutError, KeyError, TypeError):
            entities = heuristic_entities(rq.text)
        rq.extracted_entities = entities
        return entities

    def fused_retrieve(self, rq: RetrievalQuery | None = None, text: str | None = None) -> RetrievalResult:
        if rq is None:
            rq = RetrievalQuery(text=text or "", k=self.cfg.k)
        idx = self._require_index()
        pool = self.summary_retrieve(rq)
        if not rq.extracted_entities:
            self.extract_entities(rq)
        entities = rq.extracted_entities

        if entities:
            scan = self.db.content_scan(entities, table_ids=idx.table_ids())
            cscores = content_score(entities, scan, self.cfg.w_col)
        else:
            cscores = {tid: 0.0 for tid in idx.table_ids()}

        sum_scores = np.array([s for _, s in pool])
        lo = sum_scores.min() if len(sum_scores) else 0.0
        hi = sum_scores.max() if len(sum_scores) else 0.0
        ranked = []
        for (tid, sscore) in pool:
            norm = float((sscore - lo) / (hi - lo)) if hi > lo else 0.0
            c = float(cscores.get(tid, 0.0))
            fused = self.cfg.alpha * norm + (1 - self.cfg.alpha) * c
            ranked.append(RankedTable(tid, float(fused), float(sscore), c))
        ranked.sort(key=lambda r: (-r.fused_score, r.table_id))
        return RetrievalResult(ranked=ranked[: rq.k])

    def retrieve_many(self, queries: list[RetrievalQuery]) -> list[RetrievalResult]:
        """Up to q queries in parallel per planner call."""
        queries = queries[: self.cfg.q]
        if len(queries) == 1:
            return [self.fused_retrieve(queries[0])]
        with ThreadPoolExecutor(max_workers=self.cfg.q) as pool:
            return list(pool.map(self.fused_retrieve, queries))

    def enumerate(self, pattern: str) -> list[TableRef]:
        return self.db.enumerate_tables(pattern)


def _ranks(scores: np.ndarray, ids: list[str]) -> list[int]:
    """1-based ranks, best score first, ties broken by table_id."""
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    ranks = [0] * len(ids)
    for pos, i in enumerate(order, start=1):
        ranks[i] = pos
    return ranks


class WebSearchBackend:
    def retrieve(self, query: str, k: int = 10):
        raise NotConfigured("web search backend is not configured in this build")


class WebCrawlBackend:
    def retrieve(self, url: str):
        raise NotConfigured("web crawl backend is not configured in this build")


class KnowledgeStoreBackend:
    def retrieve(self, query: str, k: int = 10):
        raise NotConfigured("knowledge store backend is not configured in this build")
