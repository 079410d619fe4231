"""Multi-statement transactions over log-structured tables.

A transaction owns, per touched table, a private manifest object on storage.
Statements fan out into pool tasks that write immutable data / delete-vector
files and stage manifest blocks; the coordinator commits the block list, then
reconciles the statement into the transaction's manifest and rewrites the
manifest object with a fresh block. Reads see the committed snapshot plus the
transaction's own manifest (overlay). Commit inserts the manifest rows and
conflict keys into the catalog, which enforces first-committer-wins under one
global lock. Data and delete-vector file names embed the writing transaction,
statement and a content digest, so a retried task attempt regenerates the
same bytes under the same name and an already-exists put is success.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from . import manifest as mf
from .catalog import (
    CHECKPOINTS,
    MANIFESTS,
    TABLES,
    WHOLE_TABLE,
    WRITESETS,
    Catalog,
    Isolation,
    ManifestsRow,
    TablesRow,
)
from .datafile import (
    DataFileMeta,
    DeleteVector,
    Schema,
    content_digest,
    decode_data_file,
    decode_delete_vector,
    encode_data_file,
    encode_delete_vector,
    file_meta_for,
    merge_delete_vectors,
)
from .dcp import DcpSimulator, FaultPolicy, Task, TaskResult, distribute
from .errors import (
    AlreadyExistsError,
    CorruptFileError,
    DuplicateKeyError,
    EngineError,
    RetryableError,
    SchemaError,
    TxnClosedError,
    UnknownTableError,
)
from .object_store import BlockId, LocalObjectStore

TABLE = "table"
FILE = "file"
_GRANULARITIES = (TABLE, FILE)

_COMPARE_OPS = ("=", "!=", "<", "<=", ">", ">=")


# ---------------------------------------------------------------------------
# predicates: conjunctions of (column, op, constant)

def normalize_predicate(schema: Schema, predicate) -> tuple:
    conds = []
    for col, op, value in predicate or ():
        typ = schema.type_of(col)
        if op not in _COMPARE_OPS:
            raise SchemaError(f"unknown predicate operator: {op}")
        if typ == "float64" and type(value) is int:
            value = float(value)
        expected = {"int64": int, "float64": float, "utf8": str, "bool": bool}[typ]
        if type(value) is not expected:
            raise SchemaError(f"predicate value {value!r} does not match {typ} column {col}")
        conds.append((col, op, value))
    return tuple(conds)


def _cmp(op: str, a, b) -> bool:
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def row_matches(schema: Schema, conds, row) -> bool:
    for col, op, value in conds:
        if not _cmp(op, row[schema.index_of(col)], value):
            return False
    return True


def file_can_match(meta: DataFileMeta, conds) -> bool:
    """Min/max pruning: False only when no row can satisfy the conjunction."""
    if meta.row_count == 0:
        return False
    for col, op, value in conds:
        stat = meta.stat_for(col)
        if stat is None:
            continue
        lo, hi = stat
        if op == "=" and (value < lo or value > hi):
            return False
        if op == "!=" and lo == hi == value:
            return False
        if op == "<" and lo >= value:
            return False
        if op == "<=" and lo > value:
            return False
        if op == ">" and hi <= value:
            return False
        if op == ">=" and hi < value:
            return False
    return True


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TableDef:
    table_id: int
    name: str
    schema: Schema
    distribution_count: int = 1
    partition_key: "tuple | None" = None
    distribution_key: "tuple | None" = None

    @classmethod
    def from_row(cls, row: TablesRow) -> "TableDef":
        return cls(
            table_id=row.table_id,
            name=row.name,
            schema=Schema(row.columns),
            distribution_count=row.distribution_count,
            partition_key=row.partition_key,
            distribution_key=row.distribution_key,
        )

    def to_row(self) -> TablesRow:
        return TablesRow(
            table_id=self.table_id,
            name=self.name,
            columns=self.schema.columns,
            distribution_count=self.distribution_count,
            partition_key=self.partition_key,
            distribution_key=self.distribution_key,
        )


@dataclass(frozen=True)
class CommitOutcome:
    version: int
    wallclock: "float | None"
    sequences: dict  # table_id -> assigned sequence
    read_only: bool = False


@dataclass
class EngineConfig:
    min_rows_per_file: int = 1000
    small_file_trigger: int = 8
    delete_fraction_trigger: float = 0.2
    checkpoint_trigger: int = 10
    retention_seconds: float = 7 * 86400.0
    compaction_target_rows: int = 100_000
    max_task_attempts: int = 3
    write_workers: int = 1
    read_workers: int = 1
    auto_maintenance: bool = False


ACTIVE = "active"
COMMITTED = "committed"
ABORTED = "aborted"


class Txn:
    """Handle for one engine transaction. Thin wrapper: all behavior lives on
    the engine; this object carries the snapshot, the per-table manifests and
    the statement counter."""

    def __init__(self, engine: "Engine", ctx, granularity: str):
        self.engine = engine
        self.ctx = ctx
        self.granularity = granularity
        self.status = ACTIVE
        self.snapshots: dict[int, mf.TableState] = {}
        self.manifests: dict[int, tuple] = {}
        self.manifest_paths: dict[int, str] = {}
        self.orphans: list[str] = []
        self.stmt = 0

    @property
    def txn_id(self) -> int:
        return self.ctx.txn_id

    @property
    def isolation(self) -> Isolation:
        return self.ctx.isolation

    @property
    def guid(self) -> str:
        # unique per txn, carries the begin revision so storage-only scans
        # (garbage collection) can age uncommitted manifests
        return f"x{self.ctx.txn_id}r{self.ctx.begin_version}"

    def next_stmt(self) -> int:
        self.stmt += 1
        return self.stmt

    # conveniences
    def insert(self, table, rows) -> int:
        return self.engine.insert(self, table, rows)

    def delete(self, table, predicate) -> int:
        return self.engine.delete(self, table, predicate)

    def update(self, table, set_clause, predicate) -> int:
        return self.engine.update(self, table, set_clause, predicate)

    def scan(self, table, columns=None, predicate=None, aggregate=None, as_of=None):
        return self.engine.scan(self, table, columns, predicate, aggregate, as_of)

    def commit(self) -> CommitOutcome:
        return self.engine.commit(self)

    def abort(self) -> None:
        self.engine.abort(self)


class Engine:
    """Facade wiring the object store, catalog, snapshot manager, compute pool
    and maintenance together over one storage root."""

    def __init__(self, root: str, *, workspace: str = "main",
                 config: "EngineConfig | None" = None,
                 fault_policy: "FaultPolicy | None" = None):
        import os

        from .maintenance import Maintenance, Sto

        self.root = root
        self.workspace = workspace
        self.config = config or EngineConfig()
        os.makedirs(root, exist_ok=True)
        self.store = LocalObjectStore(os.path.join(root, "objects"))
        self.catalog = Catalog(os.path.join(root, "catalog.journal"))
        self.snapshots = mf.SnapshotManager(self.catalog, self.store)
        self.dcp = DcpSimulator(
            write_workers=self.config.write_workers,
            read_workers=self.config.read_workers,
            max_attempts=self.config.max_task_attempts,
            fault_policy=fault_policy,
        )
        self.maintenance = Maintenance(self)
        self.sto = Sto(self) if self.config.auto_maintenance else None
        self._cache_mutex = threading.Lock()
        self._row_cache: dict[str, tuple] = {}
        self._dv_cache: dict[str, frozenset] = {}

    def close(self) -> None:
        if self.sto is not None:
            self.sto.stop()
        self.dcp.close()
        self.catalog.close()

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # ------------------------------------------------------------------
    # paths

    def table_dir(self, table_id: int) -> str:
        return f"{self.workspace}/t{table_id}"

    def manifest_path(self, txn: Txn, table_id: int) -> str:
        return f"{self.table_dir(table_id)}/manifests/{txn.guid}.m"

    # ------------------------------------------------------------------
    # DDL (autocommitted catalog transactions)

    def create_table(self, name: str, columns, *, distribution_count: int = 1,
                     partition_key=None, distribution_key=None) -> TableDef:
        schema = columns if isinstance(columns, Schema) else Schema.of(*columns)
        for col in tuple(partition_key or ()) + tuple(distribution_key or ()):
            schema.type_of(col)  # raises on unknown column
        ctx = self.catalog.begin(Isolation.SI)
        try:
            if self.catalog.read(ctx, TABLES, where={"name": name}):
                raise DuplicateKeyError(f"table {name} already exists")
            tdef = TableDef(
                table_id=self.catalog.max_table_id + 1,
                name=name,
                schema=schema,
                distribution_count=distribution_count,
                partition_key=tuple(partition_key) if partition_key else None,
                distribution_key=tuple(distribution_key) if distribution_key else None,
            )
            self.catalog.insert(ctx, TABLES, tdef.to_row())
            self.catalog.commit(ctx)
        except Exception:
            if ctx.status == ACTIVE:
                self.catalog.abort(ctx)
            raise
        return tdef

    def drop_table(self, table) -> None:
        """Delete the table row and its manifest / conflict-key rows; the
        table's files become orphans and age out through garbage collection."""
        ctx = self.catalog.begin(Isolation.SI)
        try:
            tdef = self._resolve(ctx, table)
            self.catalog.delete(ctx, TABLES, (tdef.table_id,))
            for row in self.catalog.read(ctx, MANIFESTS, where={"table_id": tdef.table_id}):
                self.catalog.delete(ctx, MANIFESTS, (row.table_id, row.manifest_path))
            for row in self.catalog.read(ctx, WRITESETS, where={"table_id": tdef.table_id}):
                self.catalog.delete(ctx, WRITESETS, (row.table_id, row.file_name))
            for row in self.catalog.read(ctx, CHECKPOINTS, where={"table_id": tdef.table_id}):
                self.catalog.delete(ctx, CHECKPOINTS, (row.table_id, row.upto_sequence))
            self.catalog.commit(ctx)
        except Exception:
            if ctx.status == ACTIVE:
                self.catalog.abort(ctx)
            raise

    def clone_table(self, source, dest_name: str, as_of=None) -> TableDef:
        """Zero-copy clone: re-insert the source's visible manifest rows under
        a fresh table id. No data or manifest object is copied; both tables
        keep referencing the same immutable files and diverge independently."""
        ctx = self.catalog.begin(Isolation.SI)
        try:
            src = self._resolve(ctx, source)
            if self.catalog.read(ctx, TABLES, where={"name": dest_name}):
                raise DuplicateKeyError(f"table {dest_name} already exists")
            upto = None
            if as_of is not None:
                upto = self.snapshots.resolve_point(
                    ctx, src.table_id, as_of, self.config.retention_seconds
                )
            rows = self.snapshots.visible_manifests(ctx, src.table_id, upto)
            dest = TableDef(
                table_id=self.catalog.max_table_id + 1,
                name=dest_name,
                schema=src.schema,
                distribution_count=src.distribution_count,
                partition_key=src.partition_key,
                distribution_key=src.distribution_key,
            )
            self.catalog.insert(ctx, TABLES, dest.to_row())
            for row in rows:
                self.catalog.insert(
                    ctx,
                    MANIFESTS,
                    ManifestsRow(
                        table_id=dest.table_id,
                        manifest_path=row.manifest_path,
                        transaction_id=row.transaction_id,
                    ),
                )
            self.catalog.commit(ctx)
        except Exception:
            if ctx.status == ACTIVE:
                self.catalog.abort(ctx)
            raise
        return dest

    def table(self, name_or_id) -> TableDef:
        ctx = self.catalog.begin(Isolation.SI)
        try:
            return self._resolve(ctx, name_or_id)
        finally:
            self.catalog.abort(ctx)

    def list_tables(self) -> list:
        ctx = self.catalog.begin(Isolation.SI)
        try:
            return [TableDef.from_row(r) for r in self.catalog.read(ctx, TABLES)]
        finally:
            self.catalog.abort(ctx)

    def _resolve(self, ctx, table) -> TableDef:
        if isinstance(table, TableDef):
            # re-read so the txn's snapshot governs visibility
            table = table.table_id
        if isinstance(table, int):
            row = self.catalog.get(ctx, TABLES, (table,))
            if row is None:
                raise UnknownTableError(f"no table with id {table}")
            return TableDef.from_row(row)
        rows = self.catalog.read(ctx, TABLES, where={"name": table})
        if not rows:
            raise UnknownTableError(f"no table named {table}")
        return TableDef.from_row(rows[0])

    # ------------------------------------------------------------------
    # transactions

    def begin_transaction(self, isolation="si", granularity: str = TABLE,
                          durable: bool = False) -> Txn:
        """Start a transaction. Pass durable=True when the transaction will be
        persisted and resumed by a later process: it pins the txn id in the
        catalog journal so no other process can be handed the same id (ids
        name the txn's manifest objects, so a collision would let two live
        transactions overwrite each other's pending state)."""
        if granularity not in _GRANULARITIES:
            raise ValueError(f"granularity must be one of {_GRANULARITIES}")
        ctx = self.catalog.begin(Isolation.parse(isolation))
        if durable:
            self.catalog.reserve(ctx)
        return Txn(self, ctx, granularity)

    def _check_active(self, txn: Txn) -> None:
        if txn.status != ACTIVE:
            raise TxnClosedError(f"transaction {txn.txn_id} is {txn.status}")

    def _table_state(self, txn: Txn, tdef: TableDef) -> mf.TableState:
        """Committed snapshot plus the txn's own manifest. RCSI re-captures
        the committed part per statement; SI and SERIALIZABLE pin it at first
        use."""
        tid = tdef.table_id
        if txn.isolation is Isolation.RCSI:
            base = self.snapshots.state(txn.ctx, tid)
        else:
            base = txn.snapshots.get(tid)
            if base is None:
                base = txn.snapshots[tid] = self.snapshots.state(txn.ctx, tid)
        own = txn.manifests.get(tid)
        return mf.overlay(base, own) if own else base

    # ------------------------------------------------------------------
    # cached immutable-file reads

    def _file_rows(self, path: str) -> tuple:
        with self._cache_mutex:
            rows = self._row_cache.get(path)
        if rows is None:
            _, decoded, _ = decode_data_file(self.store.get_object(path))
            rows = tuple(decoded)
            with self._cache_mutex:
                if len(self._row_cache) >= 512:
                    self._row_cache.pop(next(iter(self._row_cache)))
                self._row_cache[path] = rows
        return rows

    def _dv_bits(self, dv_ref: "mf.DvRef | None") -> frozenset:
        if dv_ref is None:
            return frozenset()
        with self._cache_mutex:
            bits = self._dv_cache.get(dv_ref.path)
        if bits is None:
            dv, _, _ = decode_delete_vector(self.store.get_object(dv_ref.path))
            bits = dv.bits
            with self._cache_mutex:
                if len(self._dv_cache) >= 512:
                    self._dv_cache.pop(next(iter(self._dv_cache)))
                self._dv_cache[dv_ref.path] = bits
        return bits

    def _put_idempotent(self, path: str, payload: bytes) -> None:
        """Write-once put that treats an existing identical object as success;
        names embed a content digest, so a retried attempt lands on the same
        path with the same bytes."""
        try:
            self.store.put_object(path, payload)
        except AlreadyExistsError:
            if self.store.get_object(path) != payload:
                raise CorruptFileError(f"path collision with different content: {path}")

    # ------------------------------------------------------------------
    # statement plumbing

    def _apply_statement(self, txn: Txn, tdef: TableDef, stmt: int, results,
                         leading_actions=()) -> None:
        """Fold a statement's task results into the txn manifest and rewrite
        the manifest object. First statement on a table additionally commits
        the raw task blocks in task order and decodes them back, exercising
        the uncoordinated multi-writer path end to end."""
        new_actions = tuple(leading_actions) + tuple(
            a for r in results for a in r.actions
        )
        if not new_actions:
            return  # statement changed nothing; manifest object untouched
        tid = tdef.table_id
        mpath = self.manifest_path(txn, tid)
        own = txn.manifests.get(tid)
        if own is None and not leading_actions:
            blocks = [b for r in results for b in r.block_ids]
            self.store.commit_block_list(mpath, blocks)
            decoded = mf.decode_manifest(self.store.get_object(mpath))
            if decoded != new_actions:
                raise EngineError(f"manifest block decode mismatch on {mpath}")
        reconciled, orphans = mf.reconcile(own or (), new_actions)
        if reconciled:
            fe_block = BlockId.derive(f"{txn.guid}s{stmt}.fe")
            self.store.stage_block(mpath, fe_block, mf.encode_actions(reconciled))
            self.store.commit_block_list(mpath, [fe_block])
            txn.manifests[tid] = reconciled
            txn.manifest_paths[tid] = mpath
        else:
            # the statement retracted everything earlier statements did to
            # this table; the txn no longer needs a manifest object for it
            if self.store.object_exists(mpath):
                self.store.delete_object(mpath)
            txn.manifests[tid] = ()
            txn.manifest_paths.pop(tid, None)
        txn.orphans.extend(orphans)

    def _insert_task(self, txn: Txn, tdef: TableDef, stmt: int, index: int,
                     bucket: int, rows: tuple, task_id: str) -> Task:
        schema = tdef.schema
        mpath = self.manifest_path(txn, tdef.table_id)
        created_rev = txn.ctx.begin_version

        def fn(fc) -> TaskResult:
            fc.checkpoint("before")
            payload = encode_data_file(schema, rows, created_rev)
            name = f"{txn.guid}s{stmt}b{bucket}-{content_digest(payload)}.col"
            path = f"{self.table_dir(tdef.table_id)}/data/{name}"
            self._put_idempotent(path, payload)
            fc.checkpoint("mid")
            action = mf.add_file(file_meta_for(path, payload))
            block = BlockId.derive(f"{task_id}a{fc.attempt}")
            self.store.stage_block(mpath, block, mf.encode_actions([action]))
            fc.checkpoint("after")
            return TaskResult(task_id, actions=(action,), block_ids=(block,), value=len(rows))

        return Task(task_id, "write", fn, cells=((tdef.table_id, "b", bucket),))

    def insert(self, txn: Txn, table, rows) -> int:
        self._check_active(txn)
        tdef = self._resolve(txn.ctx, table)
        coerced = [tdef.schema.coerce_row(r) for r in rows]
        if not coerced:
            return 0
        buckets = distribute(
            tdef.schema, coerced, tdef.distribution_count,
            tdef.distribution_key, tdef.partition_key,
        )
        stmt = txn.next_stmt()
        tasks = []
        for bucket, brows in enumerate(buckets):
            if not brows:
                continue
            task_id = f"{txn.guid}s{stmt}.{len(tasks):03d}"
            tasks.append(self._insert_task(txn, tdef, stmt, len(tasks), bucket,
                                           tuple(brows), task_id))
        results = self.dcp.run_tasks(tasks)
        self._apply_statement(txn, tdef, stmt, results)
        return len(coerced)

    def _mask_task(self, txn: Txn, tdef: TableDef, stmt: int, index: int,
                   lf: mf.LiveFile, conds, task_id: str, set_clause=None) -> Task:
        """Shared by delete and update: compute matched ordinals of one file,
        extend its delete vector (or remove the file outright when nothing
        survives) and, for updates, return the rewritten rows."""
        schema = tdef.schema
        mpath = self.manifest_path(txn, tdef.table_id)
        created_rev = txn.ctx.begin_version
        meta, dv_ref = lf.meta, lf.dv

        def fn(fc) -> TaskResult:
            fc.checkpoint("before")
            rows = self._file_rows(meta.path)
            cur_bits = self._dv_bits(dv_ref)
            matched = [
                i for i, row in enumerate(rows)
                if i not in cur_bits and row_matches(schema, conds, row)
            ]
            if not matched:
                fc.checkpoint("mid")
                fc.checkpoint("after")
                return TaskResult(task_id, value=(0, ()))
            new_rows = ()
            if set_clause is not None:
                new_rows = tuple(
                    tuple(set_clause.get(name, row[i]) for i, name in enumerate(schema.names))
                    for row in (rows[j] for j in matched)
                )
            merged = frozenset(cur_bits | set(matched))
            actions = []
            if dv_ref is not None:
                actions.append(mf.remove_dv(dv_ref.path, dv_ref.meta))
            if len(merged) == meta.row_count:
                actions.append(mf.remove_file(meta.path))
            else:
                dv = DeleteVector(meta.path, merged)
                payload = encode_delete_vector(dv, meta.row_count, created_rev)
                name = f"{txn.guid}s{stmt}k{index}-{content_digest(payload)}.dv"
                path = f"{self.table_dir(tdef.table_id)}/dv/{name}"
                self._put_idempotent(path, payload)
                actions.append(mf.add_dv(path, mf.DvMeta(
                    target=meta.path,
                    cardinality=len(merged),
                    target_row_count=meta.row_count,
                    created_rev=created_rev,
                    size_bytes=len(payload),
                )))
            fc.checkpoint("mid")
            block = BlockId.derive(f"{task_id}a{fc.attempt}")
            self.store.stage_block(mpath, block, mf.encode_actions(actions))
            fc.checkpoint("after")
            return TaskResult(task_id, actions=tuple(actions), block_ids=(block,),
                              value=(len(matched), new_rows))

        return Task(task_id, "write", fn, cells=((tdef.table_id, "f", meta.path),))

    def delete(self, txn: Txn, table, predicate) -> int:
        self._check_active(txn)
        tdef = self._resolve(txn.ctx, table)
        conds = normalize_predicate(tdef.schema, predicate)
        state = self._table_state(txn, tdef)
        candidates = [lf for lf in state.live.values() if file_can_match(lf.meta, conds)]
        if not candidates:
            return 0
        stmt = txn.next_stmt()
        tasks = [
            self._mask_task(txn, tdef, stmt, i, lf, conds,
                            f"{txn.guid}s{stmt}.{i:03d}")
            for i, lf in enumerate(candidates)
        ]
        results = self.dcp.run_tasks(tasks)
        self._apply_statement(txn, tdef, stmt, results)
        return sum(r.value[0] for r in results)

    def update(self, txn: Txn, table, set_clause: dict, predicate) -> int:
        """Delete the matched row versions and re-insert rewritten ones, all
        inside one statement (one manifest reconcile)."""
        self._check_active(txn)
        tdef = self._resolve(txn.ctx, table)
        schema = tdef.schema
        conds = normalize_predicate(tdef.schema, predicate)
        if not set_clause:
            raise SchemaError("update needs at least one assignment")
        fixed = {}
        for col, value in set_clause.items():
            schema.index_of(col)  # unknown-column check; values coerce on re-insert
            fixed[col] = value
        state = self._table_state(txn, tdef)
        candidates = [lf for lf in state.live.values() if file_can_match(lf.meta, conds)]
        if not candidates:
            return 0
        stmt = txn.next_stmt()
        mask_tasks = [
            self._mask_task(txn, tdef, stmt, i, lf, conds,
                            f"{txn.guid}s{stmt}.{i:03d}", set_clause=fixed)
            for i, lf in enumerate(candidates)
        ]
        results = list(self.dcp.run_tasks(mask_tasks))
        new_rows = [schema.coerce_row(r) for res in results for r in res.value[1]]
        count = sum(r.value[0] for r in results)
        if new_rows:
            buckets = distribute(schema, new_rows, tdef.distribution_count,
                                 tdef.distribution_key, tdef.partition_key)
            base = len(mask_tasks)
            insert_tasks = []
            for bucket, brows in enumerate(buckets):
                if not brows:
                    continue
                task_id = f"{txn.guid}s{stmt}.{base + len(insert_tasks):03d}"
                insert_tasks.append(
                    self._insert_task(txn, tdef, stmt, base + len(insert_tasks),
                                      bucket, tuple(brows), task_id)
                )
            results.extend(self.dcp.run_tasks(insert_tasks))
        self._apply_statement(txn, tdef, stmt, results)
        return count

    # ------------------------------------------------------------------
    # reads

    def scan(self, txn: Txn, table, columns=None, predicate=None,
             aggregate=None, as_of=None):
        """Rows (projected, file order) or an aggregate over the visible state.

        as_of reads a historical sequence / timestamp point instead of the
        txn snapshot; it is rejected while the txn has its own writes on the
        table, since those have no defined position in history.
        """
        self._check_active(txn)
        tdef = self._resolve(txn.ctx, table)
        conds = normalize_predicate(tdef.schema, predicate)
        if as_of is not None:
            if txn.manifests.get(tdef.table_id):
                raise EngineError("as-of scan with uncommitted writes on this table")
            upto = self.snapshots.resolve_point(
                txn.ctx, tdef.table_id, as_of, self.config.retention_seconds
            )
            state = self.snapshots.state(txn.ctx, tdef.table_id, upto=upto, record=False)
        else:
            state = self._table_state(txn, tdef)
        schema = tdef.schema
        if columns is not None:
            proj = tuple(schema.index_of(c) for c in columns)
        files = [lf for lf in state.live.values() if file_can_match(lf.meta, conds)]
        stmt = txn.next_stmt()
        tasks = []
        for i, lf in enumerate(files):
            meta, dv_ref = lf.meta, lf.dv
            task_id = f"{txn.guid}s{stmt}.r{i:03d}"

            def fn(fc, meta=meta, dv_ref=dv_ref, task_id=task_id) -> TaskResult:
                fc.checkpoint("before")
                rows = self._file_rows(meta.path)
                bits = self._dv_bits(dv_ref)
                out = [row for i2, row in enumerate(rows)
                       if i2 not in bits and row_matches(schema, conds, row)]
                fc.checkpoint("mid")
                fc.checkpoint("after")
                return TaskResult(task_id, value=tuple(out))

            tasks.append(Task(task_id, "read", fn,
                              cells=((tdef.table_id, "scan", meta.path),)))
        results = self.dcp.run_tasks(tasks)
        rows = [row for r in results for row in r.value]
        if aggregate is not None:
            return self._aggregate(schema, aggregate, rows)
        if columns is not None:
            rows = [tuple(row[i] for i in proj) for row in rows]
        return rows

    @staticmethod
    def _aggregate(schema: Schema, aggregate, rows):
        kind = aggregate[0] if isinstance(aggregate, (tuple, list)) else aggregate
        if kind == "count":
            return len(rows)
        if kind == "sum":
            col = aggregate[1]
            typ = schema.type_of(col)
            if typ not in ("int64", "float64"):
                raise SchemaError(f"sum over non-numeric column {col}")
            idx = schema.index_of(col)
            return sum(row[idx] for row in rows)
        raise SchemaError(f"unknown aggregate: {aggregate!r}")

    # ------------------------------------------------------------------
    # commit / abort

    @staticmethod
    def writeset_keys(actions, granularity: str) -> list:
        """Conflict keys of a reconciled manifest: the pre-existing data files
        whose visibility or delete vector this txn changes. Files the txn
        itself added never count (no one else can see them); insert-only
        manifests yield no keys at all."""
        own_adds = {a.path for a in actions if a.kind in (mf.ADD, mf.ADD_DV)}
        touched = []
        for act in actions:
            if act.kind == mf.REMOVE and act.path not in own_adds:
                touched.append(act.path)
            elif act.kind in (mf.ADD_DV, mf.REMOVE_DV) and act.meta.target not in own_adds:
                touched.append(act.meta.target)
        deduped = sorted(set(touched))
        if not deduped:
            return []
        return [WHOLE_TABLE] if granularity == TABLE else deduped

    def commit(self, txn: Txn) -> CommitOutcome:
        self._check_active(txn)
        writes = {tid: acts for tid, acts in txn.manifests.items() if acts}
        manifest_keys = {}
        for tid, actions in sorted(writes.items()):
            for key in self.writeset_keys(actions, txn.granularity):
                self.catalog.upsert_writeset(txn.ctx, tid, key)
            path = txn.manifest_paths[tid]
            self.catalog.insert(txn.ctx, MANIFESTS, ManifestsRow(
                table_id=tid, manifest_path=path, transaction_id=txn.txn_id,
            ))
            manifest_keys[tid] = (tid, path)
        try:
            result = self.catalog.commit(txn.ctx)
        except RetryableError:
            txn.status = ABORTED
            raise
        txn.status = COMMITTED
        sequences = {tid: result.sequences[key] for tid, key in manifest_keys.items()}
        if self.sto is not None:
            for tid in sequences:
                self.sto.notify(tid)
        return CommitOutcome(
            version=result.version,
            wallclock=result.wallclock,
            sequences=sequences,
            read_only=not writes,
        )

    def abort(self, txn: Txn) -> None:
        """Idempotent. The txn's files and manifest objects stay on storage as
        unreferenced orphans until garbage collection ages them out."""
        if txn.status == ABORTED:
            return
        self._check_active(txn)
        self.catalog.abort(txn.ctx)
        txn.status = ABORTED

    # ------------------------------------------------------------------
    # session re-attachment (CLI)

    def attach_transaction(self, txn_id: int, begin_version: int, isolation,
                           granularity: str, stmt: int, manifest_paths: dict,
                           orphans=(), read_set=()) -> Txn:
        ctx = self.catalog.adopt(txn_id, begin_version, isolation, read_set)
        txn = Txn(self, ctx, granularity)
        txn.stmt = stmt
        txn.orphans = list(orphans)
        for tid, mpath in manifest_paths.items():
            actions = mf.decode_manifest(self.store.get_object(mpath))
            txn.manifests[int(tid)] = actions
            txn.manifest_paths[int(tid)] = mpath
        return txn
