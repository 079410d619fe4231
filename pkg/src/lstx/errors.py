"""Exception hierarchy shared across the engine.

Retryable errors (conflicts) are separated from everything else so callers
can build retry loops without string matching.
"""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class StorageError(EngineError):
    pass


class InvalidPathError(StorageError):
    pass


class NotFoundError(StorageError):
    pass


class AlreadyExistsError(StorageError):
    pass


class UnknownBlockError(StorageError):
    """commit_block_list referenced a block id that is not staged."""


class SchemaError(EngineError):
    pass


class CorruptFileError(EngineError):
    """Checksum or framing mismatch in a data or delete-vector file."""


class ManifestError(EngineError):
    pass


class CorruptManifestError(ManifestError):
    pass


class DanglingRemoveError(ManifestError):
    """A Remove action referenced a file that is not live."""


class SequenceGapError(ManifestError):
    """A committed sequence is visible in the catalog but its manifest is missing."""


class OutOfRetentionError(EngineError):
    pass


class UnknownTableError(EngineError):
    pass


class DuplicateKeyError(EngineError):
    pass


class TxnClosedError(EngineError):
    """Operation on a transaction that already committed or aborted."""


class StatementError(EngineError):
    """A statement failed permanently; the transaction itself is still open."""


class RetryableError(EngineError):
    """Conflicts that a client may retry on a fresh transaction."""


class WWConflictError(RetryableError):
    """First-committer-wins write-write conflict."""


class SerializationFailureError(RetryableError):
    """Commit-time read validation failed under SERIALIZABLE."""
