"""Transactional storage engine for log-structured tables.

Immutable columnar files plus append-only manifest metadata, snapshot
isolation with first-committer-wins, a simulated distributed write path with
block aggregation and fault retry, and autonomous maintenance (compaction,
checkpoints, publishing, garbage collection, time travel, zero-copy clones).
"""

from .catalog import Catalog, Isolation
from .datafile import DataFileMeta, DeleteVector, Schema
from .dcp import DcpSimulator, FaultPolicy, InjectedFault
from .errors import (
    CorruptFileError,
    CorruptManifestError,
    DuplicateKeyError,
    EngineError,
    OutOfRetentionError,
    RetryableError,
    SchemaError,
    SerializationFailureError,
    StatementError,
    StorageError,
    TxnClosedError,
    UnknownTableError,
    WWConflictError,
)
from .maintenance import GcReport, Maintenance, TableHealth
from .object_store import BlockId, LocalObjectStore, ObjectPath
from .txn import FILE, TABLE, CommitOutcome, Engine, EngineConfig, TableDef, Txn

__all__ = [
    "BlockId",
    "Catalog",
    "CommitOutcome",
    "CorruptFileError",
    "CorruptManifestError",
    "DataFileMeta",
    "DcpSimulator",
    "DeleteVector",
    "DuplicateKeyError",
    "Engine",
    "EngineConfig",
    "EngineError",
    "FaultPolicy",
    "FILE",
    "GcReport",
    "InjectedFault",
    "Isolation",
    "LocalObjectStore",
    "Maintenance",
    "ObjectPath",
    "OutOfRetentionError",
    "RetryableError",
    "Schema",
    "SchemaError",
    "SerializationFailureError",
    "StatementError",
    "StorageError",
    "TABLE",
    "TableDef",
    "TableHealth",
    "Txn",
    "TxnClosedError",
    "UnknownTableError",
    "WWConflictError",
]

__version__ = "0.1.0"
