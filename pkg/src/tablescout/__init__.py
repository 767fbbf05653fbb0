"""TableScout: agentic data discovery and preparation over tabular corpora.

The engine reifies a user's evolving information need as an explicit
relational target model — a set of declared views plus an executable
transformation — then plans, retrieves, probes, materializes, and executes
to produce an inspectable answer relation with full provenance.
"""

__version__ = "0.1.0"

from .db import DBService, ProbeResult, Relation, TableRef, Workspace
from .llm import ChatMessage, ChatRequest, LMService, ScriptedProvider, UsageRecord
from .model import (
    ColumnSpec,
    Document,
    InformationNeed,
    TargetModel,
    TransformationS,
    ViewSpec,
    validate_model,
)
from .provenance import ProvenanceGraph, ProvenanceNode, derivation_script
from .retriever import RetrievalQuery, RetrievalResult, Retriever, RetrieverConfig

__all__ = [
    "DBService",
    "ProbeResult",
    "Relation",
    "TableRef",
    "Workspace",
    "ChatMessage",
    "ChatRequest",
    "LMService",
    "ScriptedProvider",
    "UsageRecord",
    "ColumnSpec",
    "Document",
    "InformationNeed",
    "TargetModel",
    "TransformationS",
    "ViewSpec",
    "validate_model",
    "ProvenanceGraph",
    "ProvenanceNode",
    "derivation_script",
    "RetrievalQuery",
    "RetrievalResult",
    "Retriever",
    "RetrieverConfig",
    "__version__",
]
