"""SQLite-backed persistence.

One file per deployment, write-ahead journaling, a single writer funneled
through a process-wide lock, and a fresh read connection per query so
readers never block on the writer. Referential integrity is enforced in
code with named constraints; deletes are tombstones.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from .clock import SYSTEM_CLOCK, Clock
from .errors import IntegrityError, NotFoundError, RunStateError, StoreUnavailableError
from .model import (
    DriftEvent,
    PromptVersion,
    RunRecord,
    TestCase,
    Transcript,
    UseCaseConfig,
    Verdict,
    VerdictReport,
    to_iso,
)
from .repair import IterationRecord, LoopConfig
from .runner import RunObserver

CURRENT_SCHEMA_VERSION = 1
ARCHIVE_DOCUMENT_TYPE = "use_case_archive"

RUN_STATUSES = ("running", "finished", "errored")
JOB_STATUSES = ("running", "paused", "suspended", "finished", "errored", "aborted")
ACTIVE_JOB_STATUSES = ("running", "paused", "suspended")

_SCHEMA = """
CREATE TABLE meta(
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE use_cases(
    id TEXT PRIMARY KEY,
    doc TEXT NOT NULL,
    deleted INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE profiles(
    id TEXT PRIMARY KEY,
    doc TEXT NOT NULL,
    deleted INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE suite_revisions(
    revision_id TEXT PRIMARY KEY,
    use_case_id TEXT NOT NULL,
    created_at TEXT NOT NULL,
    doc TEXT NOT NULL,
    deleted INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE prompt_versions(
    use_case_id TEXT NOT NULL,
    version_index INTEGER NOT NULL,
    doc TEXT NOT NULL,
    suite_revision_id TEXT,
    verified INTEGER NOT NULL DEFAULT 0,
    deleted INTEGER NOT NULL DEFAULT 0,
    PRIMARY KEY(use_case_id, version_index)
);
CREATE TABLE runs(
    run_id TEXT PRIMARY KEY,
    use_case_id TEXT NOT NULL,
    run_kind TEXT NOT NULL,
    prompt_version_index INTEGER NOT NULL,
    suite_revision_id TEXT NOT NULL,
    status TEXT NOT NULL,
    temperature REAL,
    started_at TEXT NOT NULL,
    finished_at TEXT,
    passed INTEGER,
    failed INTEGER,
    doc TEXT,
    error TEXT,
    deleted INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE test_results(
    run_id TEXT NOT NULL,
    test_id TEXT NOT NULL,
    overall TEXT NOT NULL,
    transcript_doc TEXT NOT NULL,
    verdict_doc TEXT NOT NULL,
    PRIMARY KEY(run_id, test_id)
);
CREATE TABLE jobs(
    job_id TEXT PRIMARY KEY,
    use_case_id TEXT NOT NULL,
    kind TEXT NOT NULL,
    status TEXT NOT NULL,
    loop_config_doc TEXT NOT NULL,
    settings_doc TEXT,
    created_at TEXT NOT NULL,
    finished_at TEXT,
    result_doc TEXT,
    error TEXT,
    deleted INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE iterations(
    job_id TEXT NOT NULL,
    iteration_index INTEGER NOT NULL,
    doc TEXT NOT NULL,
    PRIMARY KEY(job_id, iteration_index)
);
CREATE TABLE drift_events(
    event_id TEXT PRIMARY KEY,
    use_case_id TEXT NOT NULL,
    status TEXT NOT NULL,
    doc TEXT NOT NULL,
    deleted INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE event_log(
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    run_id TEXT NOT NULL,
    kind TEXT NOT NULL,
    payload TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE INDEX idx_runs_use_case ON runs(use_case_id, run_kind, started_at);
CREATE INDEX idx_revisions_use_case ON suite_revisions(use_case_id, created_at);
CREATE INDEX idx_event_log_run ON event_log(run_id, seq);
CREATE INDEX idx_drift_use_case ON drift_events(use_case_id, status);
"""

# future schema bumps register an upgrade function per target version
MIGRATIONS: dict[int, Any] = {}


def resolve_ref(ref: str) -> tuple[str, str, str]:
    """Split a result ref ("tr:<run>:<test>" / "vd:<run>:<test>") into
    (kind, run_id, test_id)."""
    parts = ref.split(":", 2)
    if len(parts) != 3 or parts[0] not in ("tr", "vd"):
        raise NotFoundError(f"malformed result ref {ref!r}")
    kind = "transcript" if parts[0] == "tr" else "verdict"
    return kind, parts[1], parts[2]


class Store:
    """All reads and writes for one deployment's state file."""

    def __init__(self, path: str | Path):
        self._path = str(path)
        self._lock = threading.RLock()
        try:
            self._conn = sqlite3.connect(
                self._path, check_same_thread=False, isolation_level=None, timeout=30
            )
            self._conn.row_factory = sqlite3.Row
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA synchronous=NORMAL")
        except sqlite3.Error as err:
            raise StoreUnavailableError(f"cannot open store at {self._path}: {err}") from err
        self._init_schema()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    # -- connection plumbing -------------------------------------------------

    @contextmanager
    def _write(self) -> Iterator[sqlite3.Connection]:
        with self._lock:
            self._conn.execute("BEGIN IMMEDIATE")
            try:
                yield self._conn
            except BaseException:
                self._conn.execute("ROLLBACK")
                raise
            self._conn.execute("COMMIT")

    @contextmanager
    def _read(self) -> Iterator[sqlite3.Connection]:
        conn = sqlite3.connect(self._path, check_same_thread=False, timeout=30)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
        finally:
            conn.close()

    def _init_schema(self) -> None:
        with self._lock:
            row = self._conn.execute(
                "SELECT name FROM sqlite_master WHERE type='table' AND name='meta'"
            ).fetchone()
            if row is None:
                # executescript manages its own transaction
                self._conn.executescript(
                    _SCHEMA
                    + "INSERT INTO meta(key, value) VALUES "
                    f"('schema_version', '{CURRENT_SCHEMA_VERSION}');"
                )
                return
            version = int(
                self._conn.execute(
                    "SELECT value FROM meta WHERE key='schema_version'"
                ).fetchone()[0]
            )
            if version > CURRENT_SCHEMA_VERSION:
                raise StoreUnavailableError(
                    f"store schema {version} is newer than supported {CURRENT_SCHEMA_VERSION}"
                )
            while version < CURRENT_SCHEMA_VERSION:
                version += 1
                MIGRATIONS[version](self._conn)
                self._conn.execute(
                    "UPDATE meta SET value=? WHERE key='schema_version'", (str(version),)
                )

    def _exists(self, conn, table: str, key_column: str, key: str) -> bool:
        row = conn.execute(
            f"SELECT 1 FROM {table} WHERE {key_column}=? AND deleted=0", (key,)
        ).fetchone()
        return row is not None

    # -- use cases and profiles ----------------------------------------------

    def save_use_case(self, config: UseCaseConfig) -> None:
        doc = json.dumps(config.to_dict())
        with self._write() as conn:
            conn.execute(
                "INSERT INTO use_cases(id, doc) VALUES (?, ?) "
                "ON CONFLICT(id) DO UPDATE SET doc=excluded.doc, deleted=0",
                (config.id, doc),
            )

    def load_use_case(self, use_case_id: str) -> UseCaseConfig:
        with self._read() as conn:
            row = conn.execute(
                "SELECT doc FROM use_cases WHERE id=? AND deleted=0", (use_case_id,)
            ).fetchone()
        if row is None:
            raise NotFoundError(f"unknown use case {use_case_id!r}")
        return UseCaseConfig.from_dict(json.loads(row["doc"]))

    def list_use_cases(self) -> tuple[UseCaseConfig, ...]:
        with self._read() as conn:
            rows = conn.execute(
                "SELECT doc FROM use_cases WHERE deleted=0 ORDER BY id"
            ).fetchall()
        return tuple(UseCaseConfig.from_dict(json.loads(r["doc"])) for r in rows)

    def delete_use_case(self, use_case_id: str) -> None:
        with self._write() as conn:
            if not self._exists(conn, "use_cases", "id", use_case_id):
                raise NotFoundError(f"unknown use case {use_case_id!r}")
            conn.execute("UPDATE use_cases SET deleted=1 WHERE id=?", (use_case_id,))

    # -- suite revisions -----------------------------------------------------

    def save_suite_revision(
        self,
        use_case_id: str,
        cases: Sequence[TestCase],
        revision_id: str,
        created_at: datetime,
    ) -> str:
        doc = json.dumps([c.to_dict() for c in cases])
        with self._write() as conn:
            if not self._exists(conn, "use_cases", "id", use_case_id):
                raise IntegrityError(
                    "suite_revision_requires_use_case",
                    f"use case {use_case_id!r} does not exist",
                )
            try:
                conn.execute(
                    "INSERT INTO suite_revisions(revision_id, use_case_id, created_at, doc) "
                    "VALUES (?, ?, ?, ?)",
                    (revision_id, use_case_id, to_iso(created_at), doc),
                )
            except sqlite3.IntegrityError as err:
                raise IntegrityError(
                    "duplicate_suite_revision", f"revision {revision_id!r} already exists"
                ) from err
        return revision_id

    def load_suite_revision(self, revision_id: str) -> tuple[TestCase, ...]:
        with self._read() as conn:
            row = conn.execute(
                "SELECT doc FROM suite_revisions WHERE revision_id=? AND deleted=0",
                (revision_id,),
            ).fetchone()
        if row is None:
            raise NotFoundError(f"unknown suite revision {revision_id!r}")
        return tuple(TestCase.from_dict(d) for d in json.loads(row["doc"]))

    def latest_suite_revision(self, use_case_id: str) -> tuple[str, tuple[TestCase, ...]]:
        with self._read() as conn:
            row = conn.execute(
                "SELECT revision_id, doc FROM suite_revisions "
                "WHERE use_case_id=? AND deleted=0 ORDER BY created_at DESC, rowid DESC LIMIT 1",
                (use_case_id,),
            ).fetchone()
        if row is None:
            raise NotFoundError(f"use case {use_case_id!r} has no suite revisions")
        cases = tuple(TestCase.from_dict(d) for d in json.loads(row["doc"]))
        return row["revision_id"], cases

    # -- prompt versions -----------------------------------------------------

    def add_prompt_version(self, use_case_id: str, version: PromptVersion) -> None:
        doc = json.dumps(version.to_dict())
        with self._write() as conn:
            if not self._exists(conn, "use_cases", "id", use_case_id):
                raise IntegrityError(
                    "version_requires_use_case", f"use case {use_case_id!r} does not exist"
                )
            row = conn.execute(
                "SELECT MAX(version_index) AS top FROM prompt_versions "
                "WHERE use_case_id=? AND deleted=0",
                (use_case_id,),
            ).fetchone()
            top = row["top"]
            if top is None:
                if version.version_index != 0:
                    raise IntegrityError(
                        "version_lineage", "first stored version must have index 0"
                    )
            else:
                if version.version_index != top + 1:
                    raise IntegrityError(
                        "version_lineage",
                        f"next version must be {top + 1}, got {version.version_index}",
                    )
                # lineage is a tree: drift repairs branch from the verified
                # version, which need not be the newest index
                if version.parent_version is not None and not conn.execute(
                    "SELECT 1 FROM prompt_versions "
                    "WHERE use_case_id=? AND version_index=? AND deleted=0",
                    (use_case_id, version.parent_version),
                ).fetchone():
                    raise IntegrityError(
                        "version_lineage",
                        f"parent version {version.parent_version} does not exist",
                    )
            conn.execute(
                "INSERT INTO prompt_versions(use_case_id, version_index, doc) VALUES (?, ?, ?)",
                (use_case_id, version.version_index, doc),
            )

    def load_prompt_version(self, use_case_id: str, version_index: int) -> PromptVersion:
        with self._read() as conn:
            row = conn.execute(
                "SELECT doc FROM prompt_versions "
                "WHERE use_case_id=? AND version_index=? AND deleted=0",
                (use_case_id, version_index),
            ).fetchone()
        if row is None:
            raise NotFoundError(
                f"use case {use_case_id!r} has no version {version_index}"
            )
        return PromptVersion.from_dict(json.loads(row["doc"]))

    def list_versions(self, use_case_id: str) -> tuple[PromptVersion, ...]:
        with self._read() as conn:
            rows = conn.execute(
                "SELECT doc FROM prompt_versions WHERE use_case_id=? AND deleted=0 "
                "ORDER BY version_index",
                (use_case_id,),
            ).fetchall()
        return tuple(PromptVersion.from_dict(json.loads(r["doc"])) for r in rows)

    def delete_prompt_version(self, use_case_id: str, version_index: int) -> None:
        with self._write() as conn:
            row = conn.execute(
                "SELECT 1 FROM prompt_versions "
                "WHERE use_case_id=? AND version_index=? AND deleted=0",
                (use_case_id, version_index),
            ).fetchone()
            if row is None:
                raise NotFoundError(
                    f"use case {use_case_id!r} has no version {version_index}"
                )
            dependent = conn.execute(
                "SELECT 1 FROM runs WHERE use_case_id=? AND prompt_version_index=? "
                "AND deleted=0 LIMIT 1",
                (use_case_id, version_index),
            ).fetchone()
            if dependent is not None:
                raise IntegrityError(
                    "version_has_runs",
                    f"version {version_index} has dependent runs and cannot be deleted",
                )
            conn.execute(
                "UPDATE prompt_versions SET deleted=1 "
                "WHERE use_case_id=? AND version_index=?",
                (use_case_id, version_index),
            )

    def bind_suite_revision(
        self, use_case_id: str, version_index: int, revision_id: str
    ) -> None:
        with self._write() as conn:
            if not self._exists(conn, "suite_revisions", "revision_id", revision_id):
                raise IntegrityError(
                    "binding_requires_suite_revision",
                    f"suite revision {revision_id!r} does not exist",
                )
            updated = conn.execute(
                "UPDATE prompt_versions SET suite_revision_id=? "
                "WHERE use_case_id=? AND version_index=? AND deleted=0",
                (revision_id, use_case_id, version_index),
            )
            if updated.rowcount == 0:
                raise NotFoundError(
                    f"use case {use_case_id!r} has no version {version_index}"
                )

    def mark_verified(
        self, use_case_id: str, version_index: int, revision_id: str
    ) -> None:
        """Promote one version to production-verified, bound to the suite
        revision it passed. At most one verified version per use case."""
        with self._write() as conn:
            if not self._exists(conn, "suite_revisions", "revision_id", revision_id):
                raise IntegrityError(
                    "verification_requires_suite_revision",
                    f"suite revision {revision_id!r} does not exist",
                )
            row = conn.execute(
                "SELECT 1 FROM prompt_versions "
                "WHERE use_case_id=? AND version_index=? AND deleted=0",
                (use_case_id, version_index),
            ).fetchone()
            if row is None:
                raise NotFoundError(
                    f"use case {use_case_id!r} has no version {version_index}"
                )
            conn.execute(
                "UPDATE prompt_versions SET verified=0 WHERE use_case_id=?", (use_case_id,)
            )
            conn.execute(
                "UPDATE prompt_versions SET verified=1, suite_revision_id=? "
                "WHERE use_case_id=? AND version_index=?",
                (revision_id, use_case_id, version_index),
            )

    def get_verified(self, use_case_id: str) -> tuple[PromptVersion, str] | None:
        with self._read() as conn:
            row = conn.execute(
                "SELECT doc, suite_revision_id FROM prompt_versions "
                "WHERE use_case_id=? AND verified=1 AND deleted=0",
                (use_case_id,),
            ).fetchone()
        if row is None:
            return None
        return PromptVersion.from_dict(json.loads(row["doc"])), row["suite_revision_id"]

    # -- runs and per-test results -------------------------------------------

    def create_run(
        self,
        run_id: str,
        use_case_id: str,
        run_kind: str,
        prompt_version_index: int,
        suite_revision_id: str,
        started_at: datetime,
        temperature: float | None = None,
    ) -> None:
        with self._write() as conn:
            row = conn.execute(
                "SELECT 1 FROM prompt_versions "
                "WHERE use_case_id=? AND version_index=? AND deleted=0",
                (use_case_id, prompt_version_index),
            ).fetchone()
            if row is None:
                raise IntegrityError(
                    "run_requires_version",
                    f"use case {use_case_id!r} has no version {prompt_version_index}",
                )
            if not self._exists(conn, "suite_revisions", "revision_id", suite_revision_id):
                raise IntegrityError(
                    "run_requires_suite_revision",
                    f"suite revision {suite_revision_id!r} does not exist",
                )
            try:
                conn.execute(
                    "INSERT INTO runs(run_id, use_case_id, run_kind, prompt_version_index, "
                    "suite_revision_id, status, temperature, started_at) "
                    "VALUES (?, ?, ?, ?, ?, 'running', ?, ?)",
                    (
                        run_id,
                        use_case_id,
                        run_kind,
                        prompt_version_index,
                        suite_revision_id,
                        temperature,
                        to_iso(started_at),
                    ),
                )
            except sqlite3.IntegrityError as err:
                raise IntegrityError(
                    "duplicate_run", f"run {run_id!r} already exists"
                ) from err

    def save_test_result(
        self, run_id: str, test_id: str, transcript: Transcript, verdict: VerdictReport
    ) -> None:
        """Committed in its own transaction: a crash loses at most the test
        in flight."""
        with self._write() as conn:
            if not self._exists(conn, "runs", "run_id", run_id):
                raise IntegrityError(
                    "result_requires_run", f"run {run_id!r} does not exist"
                )
            conn.execute(
                "INSERT OR REPLACE INTO test_results"
                "(run_id, test_id, overall, transcript_doc, verdict_doc) "
                "VALUES (?, ?, ?, ?, ?)",
                (
                    run_id,
                    test_id,
                    verdict.overall.value,
                    json.dumps(transcript.to_dict()),
                    json.dumps(verdict.to_dict()),
                ),
            )

    def finish_run(self, record: RunRecord) -> None:
        with self._write() as conn:
            row = conn.execute(
                "SELECT status FROM runs WHERE run_id=? AND deleted=0", (record.run_id,)
            ).fetchone()
            if row is None:
                raise NotFoundError(f"unknown run {record.run_id!r}")
            if row["status"] != "running":
                raise RunStateError(
                    f"run {record.run_id!r} is {row['status']}, not running"
                )
            conn.execute(
                "UPDATE runs SET status='finished', finished_at=?, passed=?, failed=?, doc=? "
                "WHERE run_id=?",
                (
                    to_iso(record.finished_at),
                    record.summary.passed,
                    record.summary.failed,
                    json.dumps(record.to_dict()),
                    record.run_id,
                ),
            )

    def mark_run_errored(self, run_id: str, error: str) -> None:
        with self._write() as conn:
            updated = conn.execute(
                "UPDATE runs SET status='errored', error=? WHERE run_id=? AND status='running'",
                (error, run_id),
            )
            if updated.rowcount == 0:
                raise RunStateError(f"run {run_id!r} is not running")

    def run_status(self, run_id: str) -> dict:
        with self._read() as conn:
            row = conn.execute(
                "SELECT * FROM runs WHERE run_id=? AND deleted=0", (run_id,)
            ).fetchone()
            if row is None:
                raise NotFoundError(f"unknown run {run_id!r}")
            results = conn.execute(
                "SELECT test_id, overall FROM test_results WHERE run_id=? ORDER BY test_id",
                (run_id,),
            ).fetchall()
        status = {
            "run_id": row["run_id"],
            "use_case_id": row["use_case_id"],
            "run_kind": row["run_kind"],
            "prompt_version_index": row["prompt_version_index"],
            "suite_revision_id": row["suite_revision_id"],
            "status": row["status"],
            "temperature": row["temperature"],
            "started_at": row["started_at"],
            "finished_at": row["finished_at"],
            "error": row["error"],
            "results": {r["test_id"]: r["overall"] for r in results},
        }
        if row["doc"]:
            status["record"] = json.loads(row["doc"])
        return status

    def load_run_record(self, run_id: str) -> RunRecord:
        status = self.run_status(run_id)
        if "record" not in status:
            raise RunStateError(f"run {run_id!r} has not finished")
        return RunRecord.from_dict(status["record"])

    def query_runs(
        self,
        use_case_id: str | None = None,
        run_kind: str | None = None,
        since: datetime | None = None,
        until: datetime | None = None,
    ) -> tuple[dict, ...]:
        clauses, params = ["deleted=0"], []
        if use_case_id is not None:
            clauses.append("use_case_id=?")
            params.append(use_case_id)
        if run_kind is not None:
            clauses.append("run_kind=?")
            params.append(run_kind)
        if since is not None:
            clauses.append("started_at>=?")
            params.append(to_iso(since))
        if until is not None:
            clauses.append("started_at<=?")
            params.append(to_iso(until))
        with self._read() as conn:
            rows = conn.execute(
                "SELECT run_id, use_case_id, run_kind, prompt_version_index, "
                "suite_revision_id, status, temperature, started_at, finished_at, "
                "passed, failed FROM runs WHERE " + " AND ".join(clauses) + " "
                "ORDER BY started_at, rowid",
                params,
            ).fetchall()
        return tuple(dict(r) for r in rows)

    def latest_clean_run(
        self, use_case_id: str, prompt_version_index: int, suite_revision_id: str
    ) -> RunRecord | None:
        """Most recent finished zero-failure run on this version and suite
        revision; the regression baseline."""
        with self._read() as conn:
            row = conn.execute(
                "SELECT doc FROM runs WHERE use_case_id=? AND prompt_version_index=? "
                "AND suite_revision_id=? AND status='finished' AND failed=0 AND deleted=0 "
                "ORDER BY finished_at DESC, rowid DESC LIMIT 1",
                (use_case_id, prompt_version_index, suite_revision_id),
            ).fetchone()
        if row is None:
            return None
        return RunRecord.from_dict(json.loads(row["doc"]))

    def load_transcript(self, run_id: str, test_id: str) -> Transcript:
        with self._read() as conn:
            row = conn.execute(
                "SELECT transcript_doc FROM test_results WHERE run_id=? AND test_id=?",
                (run_id, test_id),
            ).fetchone()
        if row is None:
            raise NotFoundError(f"no result for test {test_id!r} in run {run_id!r}")
        return Transcript.from_dict(json.loads(row["transcript_doc"]))

    def load_verdict(self, run_id: str, test_id: str) -> VerdictReport:
        with self._read() as conn:
            row = conn.execute(
                "SELECT verdict_doc FROM test_results WHERE run_id=? AND test_id=?",
                (run_id, test_id),
            ).fetchone()
        if row is None:
            raise NotFoundError(f"no result for test {test_id!r} in run {run_id!r}")
        return VerdictReport.from_dict(json.loads(row["verdict_doc"]))

    def test_results_for_run(self, run_id: str) -> dict[str, Verdict]:
        with self._read() as conn:
            rows = conn.execute(
                "SELECT test_id, overall FROM test_results WHERE run_id=? ORDER BY rowid",
                (run_id,),
            ).fetchall()
        return {r["test_id"]: Verdict(r["overall"]) for r in rows}

    # -- optimization jobs ---------------------------------------------------

    def create_job(
        self,
        job_id: str,
        use_case_id: str,
        kind: str,
        loop_config: LoopConfig,
        created_at: datetime,
        settings_doc: Mapping[str, Any] | None = None,
    ) -> None:
        with self._write() as conn:
            if not self._exists(conn, "use_cases", "id", use_case_id):
                raise IntegrityError(
                    "job_requires_use_case", f"use case {use_case_id!r} does not exist"
                )
            try:
                conn.execute(
                    "INSERT INTO jobs(job_id, use_case_id, kind, status, loop_config_doc, "
                    "settings_doc, created_at) VALUES (?, ?, ?, 'running', ?, ?, ?)",
                    (
                        job_id,
                        use_case_id,
                        kind,
                        json.dumps(loop_config.to_dict()),
                        json.dumps(dict(settings_doc)) if settings_doc else None,
                        to_iso(created_at),
                    ),
                )
            except sqlite3.IntegrityError as err:
                raise IntegrityError(
                    "duplicate_job", f"job {job_id!r} already exists"
                ) from err

    def update_job_status(
        self,
        job_id: str,
        status: str,
        error: str | None = None,
        result_doc: Mapping[str, Any] | None = None,
        finished_at: datetime | None = None,
    ) -> None:
        if status not in JOB_STATUSES:
            raise RunStateError(f"unknown job status {status!r}")
        with self._write() as conn:
            updated = conn.execute(
                "UPDATE jobs SET status=?, error=?, result_doc=?, finished_at=? "
                "WHERE job_id=? AND deleted=0",
                (
                    status,
                    error,
                    json.dumps(dict(result_doc)) if result_doc else None,
                    to_iso(finished_at) if finished_at else None,
                    job_id,
                ),
            )
            if updated.rowcount == 0:
                raise NotFoundError(f"unknown job {job_id!r}")

    def load_job(self, job_id: str) -> dict:
        with self._read() as conn:
            row = conn.execute(
                "SELECT * FROM jobs WHERE job_id=? AND deleted=0", (job_id,)
            ).fetchone()
        if row is None:
            raise NotFoundError(f"unknown job {job_id!r}")
        job = {
            "job_id": row["job_id"],
            "use_case_id": row["use_case_id"],
            "kind": row["kind"],
            "status": row["status"],
            "loop_config": json.loads(row["loop_config_doc"]),
            "created_at": row["created_at"],
            "finished_at": row["finished_at"],
            "error": row["error"],
        }
        if row["settings_doc"]:
            job["settings"] = json.loads(row["settings_doc"])
        if row["result_doc"]:
            job["result"] = json.loads(row["result_doc"])
        return job

    def save_iteration(self, job_id: str, record: IterationRecord) -> None:
        with self._write() as conn:
            if not self._exists(conn, "jobs", "job_id", job_id):
                raise IntegrityError(
                    "iteration_requires_job", f"job {job_id!r} does not exist"
                )
            try:
                conn.execute(
                    "INSERT INTO iterations(job_id, iteration_index, doc) VALUES (?, ?, ?)",
                    (job_id, record.iteration_index, json.dumps(record.to_dict())),
                )
            except sqlite3.IntegrityError as err:
                raise IntegrityError(
                    "duplicate_iteration",
                    f"job {job_id!r} already has iteration {record.iteration_index}",
                ) from err

    def iterations_for_job(self, job_id: str) -> tuple[IterationRecord, ...]:
        with self._read() as conn:
            rows = conn.execute(
                "SELECT doc FROM iterations WHERE job_id=? ORDER BY iteration_index",
                (job_id,),
            ).fetchall()
        return tuple(IterationRecord.from_dict(json.loads(r["doc"])) for r in rows)

    def active_job_for(self, use_case_id: str) -> str | None:
        placeholders = ",".join("?" for _ in ACTIVE_JOB_STATUSES)
        with self._read() as conn:
            row = conn.execute(
                f"SELECT job_id FROM jobs WHERE use_case_id=? AND deleted=0 "
                f"AND status IN ({placeholders}) ORDER BY created_at DESC LIMIT 1",
                (use_case_id, *ACTIVE_JOB_STATUSES),
            ).fetchone()
        return row["job_id"] if row else None

    # -- drift events ----------------------------------------------------------

    def save_drift_event(self, use_case_id: str, event: DriftEvent) -> None:
        with self._write() as conn:
            if not self._exists(conn, "use_cases", "id", use_case_id):
                raise IntegrityError(
                    "drift_requires_use_case", f"use case {use_case_id!r} does not exist"
                )
            conn.execute(
                "INSERT INTO drift_events(event_id, use_case_id, status, doc) "
                "VALUES (?, ?, ?, ?) ON CONFLICT(event_id) DO UPDATE SET "
                "status=excluded.status, doc=excluded.doc",
                (
                    event.event_id,
                    use_case_id,
                    event.status.value,
                    json.dumps(event.to_dict()),
                ),
            )

    def load_drift_event(self, event_id: str) -> DriftEvent:
        with self._read() as conn:
            row = conn.execute(
                "SELECT doc FROM drift_events WHERE event_id=? AND deleted=0", (event_id,)
            ).fetchone()
        if row is None:
            raise NotFoundError(f"unknown drift event {event_id!r}")
        return DriftEvent.from_dict(json.loads(row["doc"]))

    def list_drift_events(
        self, use_case_id: str, status: str | None = None
    ) -> tuple[DriftEvent, ...]:
        clauses, params = ["use_case_id=?", "deleted=0"], [use_case_id]
        if status is not None:
            clauses.append("status=?")
            params.append(status)
        with self._read() as conn:
            rows = conn.execute(
                "SELECT doc FROM drift_events WHERE " + " AND ".join(clauses) + " ORDER BY rowid",
                params,
            ).fetchall()
        return tuple(DriftEvent.from_dict(json.loads(r["doc"])) for r in rows)

    # -- event log -------------------------------------------------------------

    def append_event(
        self, run_id: str, kind: str, payload: Mapping[str, Any], created_at: datetime
    ) -> int:
        with self._write() as conn:
            cursor = conn.execute(
                "INSERT INTO event_log(run_id, kind, payload, created_at) VALUES (?, ?, ?, ?)",
                (run_id, kind, json.dumps(dict(payload)), to_iso(created_at)),
            )
            return cursor.lastrowid

    def events_for(self, run_id: str, after_seq: int = 0) -> tuple[dict, ...]:
        with self._read() as conn:
            rows = conn.execute(
                "SELECT seq, kind, payload, created_at FROM event_log "
                "WHERE run_id=? AND seq>? ORDER BY seq",
                (run_id, after_seq),
            ).fetchall()
        return tuple(
            {
                "seq": r["seq"],
                "kind": r["kind"],
                "payload": json.loads(r["payload"]),
                "created_at": r["created_at"],
            }
            for r in rows
        )

    # -- export / import -------------------------------------------------------

    def export_use_case(self, use_case_id: str) -> dict:
        """Everything about one use case as a single archive document."""
        config = self.load_use_case(use_case_id)
        with self._read() as conn:
            revisions = conn.execute(
                "SELECT revision_id, created_at, doc FROM suite_revisions "
                "WHERE use_case_id=? AND deleted=0 ORDER BY rowid",
                (use_case_id,),
            ).fetchall()
            versions = conn.execute(
                "SELECT version_index, doc, suite_revision_id, verified FROM prompt_versions "
                "WHERE use_case_id=? AND deleted=0 ORDER BY version_index",
                (use_case_id,),
            ).fetchall()
            runs = conn.execute(
                "SELECT * FROM runs WHERE use_case_id=? AND deleted=0 ORDER BY rowid",
                (use_case_id,),
            ).fetchall()
            run_ids = [r["run_id"] for r in runs]
            results = []
            events = []
            for run_id in run_ids:
                results.extend(
                    conn.execute(
                        "SELECT * FROM test_results WHERE run_id=? ORDER BY rowid", (run_id,)
                    ).fetchall()
                )
                events.extend(
                    conn.execute(
                        "SELECT run_id, kind, payload, created_at FROM event_log "
                        "WHERE run_id=? ORDER BY seq",
                        (run_id,),
                    ).fetchall()
                )
            jobs = conn.execute(
                "SELECT * FROM jobs WHERE use_case_id=? AND deleted=0 ORDER BY rowid",
                (use_case_id,),
            ).fetchall()
            iterations = []
            for job in jobs:
                iterations.extend(
                    conn.execute(
                        "SELECT job_id, iteration_index, doc FROM iterations "
                        "WHERE job_id=? ORDER BY iteration_index",
                        (job["job_id"],),
                    ).fetchall()
                )
                events.extend(
                    conn.execute(
                        "SELECT run_id, kind, payload, created_at FROM event_log "
                        "WHERE run_id=? ORDER BY seq",
                        (job["job_id"],),
                    ).fetchall()
                )
            drift = conn.execute(
                "SELECT doc FROM drift_events WHERE use_case_id=? AND deleted=0 ORDER BY rowid",
                (use_case_id,),
            ).fetchall()
        return {
            "document_type": ARCHIVE_DOCUMENT_TYPE,
            "schema_version": CURRENT_SCHEMA_VERSION,
            "use_case": config.to_dict(),
            "suite_revisions": [
                {
                    "revision_id": r["revision_id"],
                    "created_at": r["created_at"],
                    "cases": json.loads(r["doc"]),
                }
                for r in revisions
            ],
            "prompt_versions": [
                {
                    "version": json.loads(v["doc"]),
                    "suite_revision_id": v["suite_revision_id"],
                    "verified": bool(v["verified"]),
                }
                for v in versions
            ],
            "runs": [dict(r) for r in runs],
            "test_results": [dict(r) for r in results],
            "jobs": [dict(j) for j in jobs],
            "iterations": [dict(i) for i in iterations],
            "drift_events": [json.loads(d["doc"]) for d in drift],
            "event_log": [dict(e) for e in events],
        }

    def import_use_case(self, archive: Mapping[str, Any]) -> str:
        if archive.get("document_type") != ARCHIVE_DOCUMENT_TYPE:
            raise ValueError(
                f"not a {ARCHIVE_DOCUMENT_TYPE} document: "
                f"{archive.get('document_type')!r}"
            )
        if archive.get("schema_version", 0) > CURRENT_SCHEMA_VERSION:
            raise StoreUnavailableError("archive schema is newer than this build")
        config = UseCaseConfig.from_dict(archive["use_case"])
        with self._write() as conn:
            if self._exists(conn, "use_cases", "id", config.id):
                raise IntegrityError(
                    "use_case_exists", f"use case {config.id!r} already exists"
                )
            conn.execute(
                "INSERT INTO use_cases(id, doc) VALUES (?, ?)",
                (config.id, json.dumps(config.to_dict())),
            )
            for rev in archive.get("suite_revisions", ()):
                conn.execute(
                    "INSERT INTO suite_revisions(revision_id, use_case_id, created_at, doc) "
                    "VALUES (?, ?, ?, ?)",
                    (
                        rev["revision_id"],
                        config.id,
                        rev["created_at"],
                        json.dumps(rev["cases"]),
                    ),
                )
            for item in archive.get("prompt_versions", ()):
                conn.execute(
                    "INSERT INTO prompt_versions"
                    "(use_case_id, version_index, doc, suite_revision_id, verified) "
                    "VALUES (?, ?, ?, ?, ?)",
                    (
                        config.id,
                        item["version"]["version_index"],
                        json.dumps(item["version"]),
                        item.get("suite_revision_id"),
                        1 if item.get("verified") else 0,
                    ),
                )
            for run in archive.get("runs", ()):
                conn.execute(
                    "INSERT INTO runs(run_id, use_case_id, run_kind, prompt_version_index, "
                    "suite_revision_id, status, temperature, started_at, finished_at, "
                    "passed, failed, doc, error) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    (
                        run["run_id"],
                        config.id,
                        run["run_kind"],
                        run["prompt_version_index"],
                        run["suite_revision_id"],
                        run["status"],
                        run.get("temperature"),
                        run["started_at"],
                        run.get("finished_at"),
                        run.get("passed"),
                        run.get("failed"),
                        run.get("doc"),
                        run.get("error"),
                    ),
                )
            for result in archive.get("test_results", ()):
                conn.execute(
                    "INSERT INTO test_results"
                    "(run_id, test_id, overall, transcript_doc, verdict_doc) "
                    "VALUES (?, ?, ?, ?, ?)",
                    (
                        result["run_id"],
                        result["test_id"],
                        result["overall"],
                        result["transcript_doc"],
                        result["verdict_doc"],
                    ),
                )
            for job in archive.get("jobs", ()):
                conn.execute(
                    "INSERT INTO jobs(job_id, use_case_id, kind, status, loop_config_doc, "
                    "settings_doc, created_at, finished_at, result_doc, error) "
                    "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    (
                        job["job_id"],
                        config.id,
                        job["kind"],
                        job["status"],
                        job["loop_config_doc"],
                        job.get("settings_doc"),
                        job["created_at"],
                        job.get("finished_at"),
                        job.get("result_doc"),
                        job.get("error"),
                    ),
                )
            for iteration in archive.get("iterations", ()):
                conn.execute(
                    "INSERT INTO iterations(job_id, iteration_index, doc) VALUES (?, ?, ?)",
                    (iteration["job_id"], iteration["iteration_index"], iteration["doc"]),
                )
            for event_doc in archive.get("drift_events", ()):
                event = DriftEvent.from_dict(event_doc)
                conn.execute(
                    "INSERT INTO drift_events(event_id, use_case_id, status, doc) "
                    "VALUES (?, ?, ?, ?)",
                    (event.event_id, config.id, event.status.value, json.dumps(event_doc)),
                )
            for entry in archive.get("event_log", ()):
                conn.execute(
                    "INSERT INTO event_log(run_id, kind, payload, created_at) "
                    "VALUES (?, ?, ?, ?)",
                    (entry["run_id"], entry["kind"], entry["payload"], entry["created_at"]),
                )
        return config.id


class StoreObserver(RunObserver):
    """Persists evaluation progress as it happens.

    Each callback commits in its own transaction, so a crash mid-run
    leaves the run row plus every completed test result behind. Pass a
    job_id to also persist iteration records for an optimization job.
    """

    def __init__(
        self,
        store: Store,
        use_case_id: str,
        suite_revision_id: str,
        temperature: float | None = None,
        job_id: str | None = None,
        clock: Clock = SYSTEM_CLOCK,
    ):
        self.store = store
        self.use_case_id = use_case_id
        self.suite_revision_id = suite_revision_id
        self.temperature = temperature
        self.job_id = job_id
        self.clock = clock

    def on_run_started(self, run_id, run_kind, version_index):
        self.store.create_run(
            run_id,
            self.use_case_id,
            run_kind.value,
            version_index,
            self.suite_revision_id,
            self.clock.now(),
            temperature=self.temperature,
        )

    def on_test_result(self, run_id, test, transcript, report, transcript_ref, verdict_ref):
        self.store.save_test_result(run_id, test.id, transcript, report)

    def on_run_finished(self, record):
        self.store.finish_run(record)

    def on_version_created(self, version):
        self.store.add_prompt_version(self.use_case_id, version)

    def on_iteration_finished(self, record):
        if self.job_id is not None:
            self.store.save_iteration(self.job_id, record)
