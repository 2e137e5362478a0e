"""
Run ledger: one SQLite row per finished sampler run.

Kept next to the run outputs (runs.db) so that repeated experiments can be
aggregated later with scripts/query_runs.py.
"""
from __future__ import annotations

import json
import logging
import os
import sqlite3
import threading
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

LOG = logging.getLogger("run_ledger")


@dataclass
class RunRecord:
    """Represents a finished sampler run."""
    run_id: str
    preset: str
    sampler: str  # e.g. "dual-is2", "primal-gibbs"
    rows: int
    cols: int
    family: str
    seed: int
    chains: int
    samples: int
    log_Z: float
    free_energy_per_site: float
    std_err: Optional[float]
    runtime_s: float
    summary: Dict[str, Any]


class RunLedger:
    """SQLite store of run results (WAL mode, indexed by sampler and preset)."""

    def __init__(self, db_path: str = "runs.db"):
        self.db_path = db_path
        self._conn: Optional[sqlite3.Connection] = None
        self._lock = threading.Lock()
        self._init_db()

    def _init_db(self) -> None:
        try:
            db_dir = os.path.dirname(self.db_path)
            if db_dir:
                os.makedirs(db_dir, exist_ok=True)

            conn = sqlite3.connect(self.db_path, check_same_thread=False)
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("PRAGMA synchronous=NORMAL")

            conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT NOT NULL,
                    preset TEXT NOT NULL,
                    sampler TEXT NOT NULL,
                    rows INTEGER NOT NULL,
                    cols INTEGER NOT NULL,
                    family TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    chains INTEGER NOT NULL,
                    samples INTEGER NOT NULL,
                    log_z REAL NOT NULL,
                    free_energy_per_site REAL NOT NULL,
                    std_err REAL,
                    runtime_s REAL NOT NULL,
                    summary_json TEXT NOT NULL,
                    created_at REAL NOT NULL
                )
            """)
            conn.execute("CREATE INDEX IF NOT EXISTS idx_sampler ON runs(sampler)")
            conn.execute("CREATE INDEX IF NOT EXISTS idx_preset ON runs(preset)")
            conn.execute("CREATE INDEX IF NOT EXISTS idx_created_at ON runs(created_at)")
            conn.commit()
            self._conn = conn
            LOG.debug(f"[run_ledger] database ready: {self.db_path}")
        except Exception as e:
            LOG.exception(f"[run_ledger] ❌ Failed to initialize database at {self.db_path}: {e}")
            raise

    def record(self, rec: RunRecord) -> None:
        """Append one finished run."""
        if not self._conn:
            raise RuntimeError("Run ledger connection not initialized")
        with self._lock:
            try:
                self._conn.execute("""
                    INSERT INTO runs (
                        run_id, preset, sampler, rows, cols, family, seed, chains, samples,
                        log_z, free_energy_per_site, std_err, runtime_s, summary_json, created_at
                    ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                """, (
                    rec.run_id, rec.preset, rec.sampler, rec.rows, rec.cols, rec.family, rec.seed,
                    rec.chains, rec.samples, rec.log_Z, rec.free_energy_per_site, rec.std_err,
                    rec.runtime_s, json.dumps(rec.summary, sort_keys=True, default=str), time.time(),
                ))
                self._conn.commit()
                LOG.info(f"[run_ledger] recorded {rec.sampler} run {rec.run_id}: (1/N) log Z = {rec.free_energy_per_site:.6f}")
            except Exception as e:
                LOG.exception(f"[run_ledger] ❌ Error recording run {rec.run_id}: {e}")
                self._conn.rollback()
                raise

    def get_stats(self, sampler: Optional[str] = None, preset: Optional[str] = None) -> List[Dict[str, Any]]:
        """Per (preset, sampler) aggregates of the recorded free energies."""
        conditions, params = [], []
        if sampler:
            conditions.append("sampler = ?")
            params.append(sampler)
        if preset:
            conditions.append("preset = ?")
            params.append(preset)
        where_clause = " WHERE " + " AND ".join(conditions) if conditions else ""
        with self._lock:
            rows = self._conn.execute(f"""
                SELECT preset, sampler,
                       COUNT(*) AS runs,
                       AVG(free_energy_per_site) AS mean_fe,
                       MIN(free_energy_per_site) AS min_fe,
                       MAX(free_energy_per_site) AS max_fe,
                       AVG(runtime_s) AS avg_runtime_s
                FROM runs
                {where_clause}
                GROUP BY preset, sampler
                ORDER BY preset, sampler
            """, params).fetchall()
        keys = ("preset", "sampler", "runs", "mean_fe", "min_fe", "max_fe", "avg_runtime_s")
        return [dict(zip(keys, row)) for row in rows]

    def get_recent_runs(self, limit: int = 10) -> List[Dict[str, Any]]:
        with self._lock:
            cursor = self._conn.execute("SELECT * FROM runs ORDER BY created_at DESC, id DESC LIMIT ?", (limit,))
            columns = [desc[0] for desc in cursor.description]
            return [dict(zip(columns, row)) for row in cursor.fetchall()]

    def close(self) -> None:
        if self._conn:
            self._conn.close()
            self._conn = None
