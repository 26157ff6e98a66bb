"""Embedded relational metadata store (sqlite).

Tables: users, datasets, roles, jobs, progress.  The job queue is rows in
``jobs`` claimed with an IMMEDIATE transaction, so two workers can never
claim the same job.  Every method opens its own connection; the store is
safe for concurrent use from threads and processes.
"""

from __future__ import annotations

import json
import sqlite3
import time
import uuid
from pathlib import Path

from .errors import DatasetNotFound, DuplicateName, UnknownJob

_SCHEMA = """
CREATE TABLE IF NOT EXISTS users (
    user_id   TEXT PRIMARY KEY,
    token     TEXT UNIQUE NOT NULL,
    is_worker INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS datasets (
    dataset_id  TEXT PRIMARY KEY,
    owner_id    TEXT NOT NULL,
    filename    TEXT NOT NULL,
    uploaded_at TEXT NOT NULL,
    byte_size   INTEGER NOT NULL,
    row_count   INTEGER NOT NULL,
    columns_json TEXT NOT NULL,
    UNIQUE(owner_id, filename)
);
CREATE TABLE IF NOT EXISTS roles (
    dataset_id TEXT PRIMARY KEY REFERENCES datasets(dataset_id),
    roles_json TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS jobs (
    job_id      TEXT PRIMARY KEY,
    seq         INTEGER,
    kind        TEXT NOT NULL,
    dataset_id  TEXT NOT NULL,
    owner_id    TEXT NOT NULL,
    params_json TEXT NOT NULL,
    state       TEXT NOT NULL DEFAULT 'queued',
    models_done  INTEGER NOT NULL DEFAULT 0,
    models_total INTEGER NOT NULL DEFAULT 0,
    worker_id   TEXT,
    error       TEXT,
    created_at  REAL NOT NULL,
    started_at  REAL,
    finished_at REAL,
    progress_at REAL
);
CREATE TABLE IF NOT EXISTS progress (
    id     INTEGER PRIMARY KEY AUTOINCREMENT,
    job_id TEXT NOT NULL,
    ts     REAL NOT NULL,
    line   TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_jobs_state ON jobs(state, created_at, seq);
"""

JOB_STATES = ("queued", "running", "completed", "failed")


def new_id(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex[:12]}"


class MetadataStore:
    def __init__(self, path: str | Path):
        self.path = str(path)
        with self._connect() as con:
            con.executescript(_SCHEMA)

    def _connect(self) -> sqlite3.Connection:
        con = sqlite3.connect(self.path, timeout=30.0)
        con.row_factory = sqlite3.Row
        con.execute("PRAGMA journal_mode=WAL")
        con.execute("PRAGMA busy_timeout=30000")
        return con

    # --- users ---------------------------------------------------------

    def add_user(self, user_id: str, token: str, is_worker: bool = False) -> None:
        with self._connect() as con:
            con.execute(
                "INSERT OR REPLACE INTO users (user_id, token, is_worker) VALUES (?,?,?)",
                (user_id, token, int(is_worker)))

    def user_by_token(self, token: str):
        with self._connect() as con:
            row = con.execute(
                "SELECT user_id, is_worker FROM users WHERE token=?", (token,)).fetchone()
        if row is None:
            return None
        return row["user_id"], bool(row["is_worker"])

    # --- datasets ------------------------------------------------------

    def insert_dataset(self, dataset_id: str, owner_id: str, filename: str,
                       uploaded_at: str, byte_size: int, row_count: int,
                       columns: list[dict]) -> None:
        try:
            with self._connect() as con:
                con.execute(
                    "INSERT INTO datasets (dataset_id, owner_id, filename, uploaded_at,"
                    " byte_size, row_count, columns_json) VALUES (?,?,?,?,?,?,?)",
                    (dataset_id, owner_id, filename, uploaded_at, byte_size,
                     row_count, json.dumps(columns)))
        except sqlite3.IntegrityError:
            raise DuplicateName(f"owner already has a dataset named {filename!r}",
                                field="filename")

    def get_dataset(self, dataset_id: str) -> dict | None:
        with self._connect() as con:
            row = con.execute(
                "SELECT * FROM datasets WHERE dataset_id=?", (dataset_id,)).fetchone()
        return self._dataset_dict(row) if row else None

    def list_datasets(self, owner_id: str) -> list[dict]:
        with self._connect() as con:
            rows = con.execute(
                "SELECT * FROM datasets WHERE owner_id=? ORDER BY uploaded_at DESC, dataset_id",
                (owner_id,)).fetchall()
        return [self._dataset_dict(r) for r in rows]

    def _dataset_dict(self, row) -> dict:
        d = dict(row)
        d["columns"] = json.loads(d.pop("columns_json"))
        d["roles"] = self.get_roles(d["dataset_id"])
        return d

    def set_roles(self, dataset_id: str, roles: dict[str, str]) -> None:
        if self.get_dataset(dataset_id) is None:
            raise DatasetNotFound(dataset_id)
        with self._connect() as con:
            con.execute(
                "INSERT OR REPLACE INTO roles (dataset_id, roles_json) VALUES (?,?)",
                (dataset_id, json.dumps(roles)))

    def get_roles(self, dataset_id: str) -> dict[str, str] | None:
        with self._connect() as con:
            row = con.execute(
                "SELECT roles_json FROM roles WHERE dataset_id=?", (dataset_id,)).fetchone()
        return json.loads(row["roles_json"]) if row else None

    # --- jobs ----------------------------------------------------------

    def create_job(self, kind: str, dataset_id: str, owner_id: str, params: dict,
                   models_total: int) -> str:
        job_id = new_id("job")
        with self._connect() as con:
            seq = con.execute("SELECT COALESCE(MAX(seq), 0) + 1 FROM jobs").fetchone()[0]
            con.execute(
                "INSERT INTO jobs (job_id, seq, kind, dataset_id, owner_id, params_json,"
                " state, models_total, created_at) VALUES (?,?,?,?,?,?, 'queued', ?, ?)",
                (job_id, seq, kind, dataset_id, owner_id, json.dumps(params),
                 models_total, time.time()))
        return job_id

    def get_job(self, job_id: str) -> dict | None:
        with self._connect() as con:
            row = con.execute("SELECT * FROM jobs WHERE job_id=?", (job_id,)).fetchone()
        if row is None:
            return None
        d = dict(row)
        d["params"] = json.loads(d.pop("params_json"))
        return d

    def list_jobs(self, owner_id: str | None = None, dataset_id: str | None = None) -> list[dict]:
        clauses, args = [], []
        if owner_id is not None:
            clauses.append("owner_id=?")
            args.append(owner_id)
        if dataset_id is not None:
            clauses.append("dataset_id=?")
            args.append(dataset_id)
        where = f"WHERE {' AND '.join(clauses)}" if clauses else ""
        with self._connect() as con:
            rows = con.execute(
                f"SELECT * FROM jobs {where} ORDER BY created_at DESC, seq DESC",
                args).fetchall()
        out = []
        for row in rows:
            d = dict(row)
            d["params"] = json.loads(d.pop("params_json"))
            out.append(d)
        return out

    def claim_next(self, worker_id: str, staleness_sec: float = 3600.0) -> dict | None:
        """Atomically claim the oldest queued job; None when the queue is empty.

        Running jobs whose last progress is older than ``staleness_sec`` are
        re-queued first, so a dead worker's job is eventually re-run.
        """
        now = time.time()
        con = self._connect()
        try:
            con.execute("BEGIN IMMEDIATE")
            con.execute(
                "UPDATE jobs SET state='queued', worker_id=NULL WHERE state='running'"
                " AND COALESCE(progress_at, started_at, 0) < ?",
                (now - staleness_sec,))
            row = con.execute(
                "SELECT job_id FROM jobs WHERE state='queued'"
                " ORDER BY created_at, seq LIMIT 1").fetchone()
            if row is None:
                con.commit()
                return None
            job_id = row["job_id"]
            con.execute(
                "UPDATE jobs SET state='running', worker_id=?, started_at=?,"
                " progress_at=? WHERE job_id=? AND state='queued'",
                (worker_id, now, now, job_id))
            con.commit()
        finally:
            con.close()
        return self.get_job(job_id)

    def post_progress(self, job_id: str, models_done: int | None = None,
                      lines: list[str] | None = None,
                      final_state: str | None = None,
                      error: str | None = None) -> str:
        """Persist a progress callback; returns "ok" or "stale".

        Stale updates (models_done below the stored value) are ignored with
        a warning line.  Re-posting the same models_done is a no-op ack.
        """
        now = time.time()
        con = self._connect()
        try:
            con.execute("BEGIN IMMEDIATE")
            row = con.execute(
                "SELECT models_done, models_total, state FROM jobs WHERE job_id=?",
                (job_id,)).fetchone()
            if row is None:
                con.commit()
                raise UnknownJob(job_id)
            status = "ok"
            stored = row["models_done"]
            if models_done is not None:
                if models_done < stored:
                    status = "stale"
                    con.execute(
                        "INSERT INTO progress (job_id, ts, line) VALUES (?,?,?)",
                        (job_id, now,
                         f"warning: stale progress update {models_done} < {stored}, ignored"))
                else:
                    con.execute(
                        "UPDATE jobs SET models_done=?, progress_at=? WHERE job_id=?",
                        (min(models_done, row["models_total"]), now, job_id))
            for line in lines or []:
                con.execute("INSERT INTO progress (job_id, ts, line) VALUES (?,?,?)",
                            (job_id, now, line))
            if final_state in ("completed", "failed"):
                con.execute(
                    "UPDATE jobs SET state=?, finished_at=?, progress_at=?, error=?"
                    " WHERE job_id=?",
                    (final_state, now, now, error, job_id))
            elif final_state is not None:
                raise UnknownJob(f"invalid final state {final_state!r}")
            con.commit()
        finally:
            con.close()
        return status

    def get_log(self, job_id: str) -> list[dict]:
        with self._connect() as con:
            rows = con.execute(
                "SELECT ts, line FROM progress WHERE job_id=? ORDER BY id",
                (job_id,)).fetchall()
        return [{"ts": r["ts"], "line": r["line"]} for r in rows]
