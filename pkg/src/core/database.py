import os
import json
import sqlite3
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Any, Dict, Iterable, List, Optional

RUN_KINDS = {'train', 'sweep', 'simulate'}
RUN_STATUSES = {'running', 'completed', 'failed'}


class DatabaseManager:
    """SQLite-backed sample index and run history."""

    def __init__(self, db_path: str = "index.db") -> None:
        self.db_path = db_path
        db_dir = os.path.dirname(os.path.abspath(self.db_path))
        if db_dir and not os.path.exists(db_dir):
            os.makedirs(db_dir, exist_ok=True)
        self._init_db()

    # ------------------------------------------------------------------
    # connection helpers
    # ------------------------------------------------------------------
    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        conn.execute("PRAGMA foreign_keys = ON")
        return conn

    @contextmanager
    def _connection(self) -> Iterable[sqlite3.Connection]:
        conn = self._connect()
        try:
            yield conn
            conn.commit()
        finally:
            conn.close()

    # ------------------------------------------------------------------
    # schema management
    # ------------------------------------------------------------------
    def _init_db(self) -> None:
        with self._connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                """
                CREATE TABLE IF NOT EXISTS samples (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    name TEXT NOT NULL UNIQUE,
                    path TEXT NOT NULL,
                    kind TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    variant INTEGER NOT NULL DEFAULT 0,
                    split TEXT NOT NULL DEFAULT 'train',
                    recipe TEXT DEFAULT '{}',
                    scan_h INTEGER NOT NULL,
                    scan_w INTEGER NOT NULL,
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
                """
            )

            cursor.execute(
                """
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    kind TEXT NOT NULL,
                    status TEXT NOT NULL,
                    message TEXT,
                    config TEXT DEFAULT '{}',
                    steps INTEGER DEFAULT 0,
                    final_loss REAL,
                    start_time TIMESTAMP,
                    end_time TIMESTAMP
                )
                """
            )

            cursor.execute(
                """
                CREATE TABLE IF NOT EXISTS sweep_results (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER NOT NULL,
                    sample TEXT NOT NULL,
                    method TEXT NOT NULL,
                    dose REAL,
                    psnr REAL,
                    ssim REAL,
                    cnr REAL,
                    cutoff REAL,
                    FOREIGN KEY (run_id) REFERENCES runs (id) ON DELETE CASCADE
                )
                """
            )
            self._ensure_schema(cursor)

    def _ensure_schema(self, cursor: sqlite3.Cursor) -> None:
        # columns added after the first release of the index format
        required_columns = [
            ("samples", "split TEXT NOT NULL DEFAULT 'train'"),
            ("runs", "final_loss REAL"),
        ]
        for table, column_def in required_columns:
            self._ensure_column(cursor, table, column_def)

    def _ensure_column(self, cursor: sqlite3.Cursor, table: str, column_def: str) -> None:
        column_name = column_def.split()[0]
        cursor.execute(f"PRAGMA table_info({table})")
        existing = {row[1] for row in cursor.fetchall()}
        if column_name not in existing:
            cursor.execute(f"ALTER TABLE {table} ADD COLUMN {column_def}")

    # ------------------------------------------------------------------
    # helper utilities
    # ------------------------------------------------------------------
    @staticmethod
    def _load_json(value: Any, default: Any) -> Any:
        if value in (None, ""):
            return default
        if isinstance(value, (dict, list)):
            return value
        try:
            return json.loads(value)
        except json.JSONDecodeError:
            return default

    @staticmethod
    def _now() -> str:
        return datetime.now(timezone.utc).isoformat()

    @staticmethod
    def _dose_to_db(dose: Optional[float]) -> Optional[float]:
        # SQLite has no infinity literal; NULL marks the infinite-dose row
        if dose is None or dose == float('inf'):
            return None
        return float(dose)

    # ------------------------------------------------------------------
    # samples
    # ------------------------------------------------------------------
    def add_sample(
        self,
        name: str,
        path: str,
        kind: str,
        seed: int,
        scan_shape: Iterable[int],
        variant: int = 0,
        split: str = 'train',
        recipe: Optional[Dict[str, Any]] = None,
    ) -> int:
        scan_h, scan_w = (int(v) for v in scan_shape)
        with self._connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                """
                INSERT OR REPLACE INTO samples (
                    name, path, kind, seed, variant, split, recipe, scan_h, scan_w
                )
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
                """,
                (
                    name,
                    path,
                    kind,
                    int(seed),
                    int(variant),
                    split,
                    json.dumps(recipe or {}, sort_keys=True),
                    scan_h,
                    scan_w,
                ),
            )
            return cursor.lastrowid

    def get_samples(self, split: Optional[str] = None) -> List[Dict[str, Any]]:
        query = "SELECT * FROM samples"
        params: List[Any] = []
        if split:
            query += " WHERE split = ?"
            params.append(split)
        query += " ORDER BY id"
        with self._connection() as conn:
            rows = conn.execute(query, params).fetchall()
        return [self._normalise_sample(dict(row)) for row in rows]

    def get_sample(self, name: str) -> Optional[Dict[str, Any]]:
        with self._connection() as conn:
            row = conn.execute("SELECT * FROM samples WHERE name = ?", (name,)).fetchone()
        return self._normalise_sample(dict(row)) if row else None

    def clear_samples(self) -> None:
        with self._connection() as conn:
            conn.execute("DELETE FROM samples")

    def _normalise_sample(self, sample: Dict[str, Any]) -> Dict[str, Any]:
        sample['recipe'] = self._load_json(sample.get('recipe'), {})
        sample['scan_shape'] = (sample.pop('scan_h'), sample.pop('scan_w'))
        return sample

    # ------------------------------------------------------------------
    # runs
    # ------------------------------------------------------------------
    def add_run(
        self,
        kind: str,
        status: str = 'running',
        config: Optional[Dict[str, Any]] = None,
        message: Optional[str] = None,
    ) -> int:
        if kind not in RUN_KINDS:
            raise ValueError(f"unknown run kind: {kind}")
        with self._connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                """
                INSERT INTO runs (kind, status, message, config, start_time)
                VALUES (?, ?, ?, ?, ?)
                """,
                (kind, status, message, json.dumps(config or {}, default=str), self._now()),
            )
            return cursor.lastrowid

    def update_run(self, run_id: int, **updates: Any) -> None:
        if not updates:
            return
        set_clauses: List[str] = []
        params: List[Any] = []
        for key, value in updates.items():
            if key not in {'status', 'message', 'steps', 'final_loss', 'end_time'}:
                continue
            if key == 'status' and value not in RUN_STATUSES:
                raise ValueError(f"unknown run status: {value}")
            if isinstance(value, datetime):
                value = value.isoformat()
            set_clauses.append(f"{key} = ?")
            params.append(value)
        if updates.get('status') in {'completed', 'failed'} and 'end_time' not in updates:
            set_clauses.append("end_time = ?")
            params.append(self._now())
        if not set_clauses:
            return
        params.append(run_id)
        with self._connection() as conn:
            conn.execute(f"UPDATE runs SET {', '.join(set_clauses)} WHERE id = ?", params)

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        with self._connection() as conn:
            row = conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone()
        if not row:
            return None
        run = dict(row)
        run['config'] = self._load_json(run.get('config'), {})
        return run

    def get_runs(self, kind: Optional[str] = None, limit: int = 200) -> List[Dict[str, Any]]:
        query = "SELECT * FROM runs"
        params: List[Any] = []
        if kind:
            query += " WHERE kind = ?"
            params.append(kind)
        query += " ORDER BY id DESC LIMIT ?"
        params.append(limit)
        with self._connection() as conn:
            rows = conn.execute(query, params).fetchall()
        runs = []
        for row in rows:
            run = dict(row)
            run['config'] = self._load_json(run.get('config'), {})
            runs.append(run)
        return runs

    # ------------------------------------------------------------------
    # sweep results
    # ------------------------------------------------------------------
    def add_sweep_result(
        self,
        run_id: int,
        sample: str,
        method: str,
        dose: Optional[float],
        psnr: Optional[float] = None,
        ssim: Optional[float] = None,
        cnr: Optional[float] = None,
        cutoff: Optional[float] = None,
    ) -> int:
        def _finite(value: Optional[float]) -> Optional[float]:
            if value is None:
                return None
            value = float(value)
            return value if abs(value) != float('inf') and value == value else None

        with self._connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                """
                INSERT INTO sweep_results (run_id, sample, method, dose, psnr, ssim, cnr, cutoff)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
                """,
                (
                    run_id,
                    sample,
                    method,
                    self._dose_to_db(dose),
                    _finite(psnr),
                    _finite(ssim),
                    _finite(cnr),
                    _finite(cutoff),
                ),
            )
            return cursor.lastrowid

    def get_sweep_results(self, run_id: int) -> List[Dict[str, Any]]:
        with self._connection() as conn:
            rows = conn.execute(
                "SELECT * FROM sweep_results WHERE run_id = ? ORDER BY id", (run_id,)
            ).fetchall()
        results = []
        for row in rows:
            result = dict(row)
            if result['dose'] is None:
                result['dose'] = float('inf')
            results.append(result)
        return results
