"""Exception hierarchy shared across the engine.

Every error carries a stable ``code`` used by the CLI for machine-readable
stderr lines and exit codes, and by planners for recovery.
"""

from __future__ import annotations


class TableScoutError(Exception):
    code = "internal"

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message


# --- target model / provenance ---

class CycleDetected(TableScoutError):
    code = "cycle_detected"


class MissingInput(TableScoutError):
    code = "missing_input"


class ValidationFailed(TableScoutError):
    """Model edit rejected; ``violations`` holds the full list."""

    code = "validation_failed"

    def __init__(self, violations):
        super().__init__("; ".join(v.message for v in violations))
        self.violations = list(violations)


# --- db service ---

class UnreadableFile(TableScoutError):
    code = "unreadable_file"


class DuplicateDatasetId(TableScoutError):
    code = "duplicate_dataset_id"


class DuplicateTableId(TableScoutError):
    code = "duplicate_table_id"


class TableNotFound(TableScoutError):
    code = "table_not_found"


class SqlError(TableScoutError):
    """Carries the engine's message verbatim — planners consume it for recovery."""

    code = "sql_error"


class TableNotVisible(SqlError):
    code = "table_not_visible"


class InvalidPattern(TableScoutError):
    code = "invalid_pattern"


# --- lm service ---

class ProviderUnavailable(TableScoutError):
    code = "provider_unavailable"


class StructureValidationFailed(TableScoutError):
    code = "structure_validation_failed"


class ProviderTimeout(TableScoutError):
    code = "provider_timeout"


class ScriptMismatch(TableScoutError):
    """Scripted reply gate did not match the latest user message. Hard test failure."""

    code = "script_mismatch"


# --- retriever ---

class IndexEmpty(TableScoutError):
    code = "index_empty"


class EmbeddingFailed(TableScoutError):
    code = "embedding_failed"


class NotConfigured(TableScoutError):
    code = "not_configured"


# --- materializer ---

class KeyNotFound(TableScoutError):
    code = "key_not_found"


class TypeMismatch(TableScoutError):
    code = "type_mismatch"


class SchemaMismatch(TableScoutError):
    code = "schema_mismatch"


class ColumnNotFound(TableScoutError):
    code = "column_not_found"


class NonTextColumns(TableScoutError):
    code = "non_text_columns"


class ScriptError(TableScoutError):
    code = "script_error"


class BudgetExceeded(TableScoutError):
    code = "budget_exceeded"


class IterationBudgetExhausted(TableScoutError):
    code = "iteration_budget_exhausted"


# --- conductor ---

class ViewNotMaterialized(TableScoutError):
    code = "view_not_materialized"
