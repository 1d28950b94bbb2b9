import aiosqlite
import json
import logging
from typing import Optional, List, Dict, Any
from datetime import datetime
import os

logger = logging.getLogger(__name__)


class RunStoreService:
    """Async SQLite record of pipeline runs started over HTTP"""

    def __init__(self, db_path: str = "data/runs.db"):
        self.db_path = db_path
        self.ensure_data_directory()

    def ensure_data_directory(self):
        directory = os.path.dirname(self.db_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

    async def init_database(self):
        try:
            async with aiosqlite.connect(self.db_path) as db:
                await db.execute("""
                    CREATE TABLE IF NOT EXISTS runs (
                        id TEXT PRIMARY KEY,
                        command TEXT NOT NULL,
                        config_digest TEXT NOT NULL,
                        status TEXT NOT NULL,
                        output_dir TEXT NOT NULL,
                        outputs TEXT, -- JSON
                        error TEXT, -- JSON
                        created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                        finished_at TIMESTAMP
                    )
                """)
                await db.execute("CREATE INDEX IF NOT EXISTS idx_runs_created_at ON runs(created_at)")
                await db.commit()
                logger.info("Run store initialized")
        except Exception as e:
            logger.error(f"Failed to initialize run store: {e}")
            raise

    async def record_run(self, run_id: str, command: str, config_digest: str, output_dir: str,
                         status: str, outputs: Optional[List[str]] = None,
                         error: Optional[Dict[str, Any]] = None) -> bool:
        try:
            async with aiosqlite.connect(self.db_path) as db:
                await db.execute("""
                    INSERT OR REPLACE INTO runs
                    (id, command, config_digest, status, output_dir, outputs, error, finished_at)
                    VALUES (?, ?, ?, ?, ?, ?, ?, ?)
                """, (
                    run_id, command, config_digest, status, output_dir,
                    json.dumps(outputs or []),
                    json.dumps(error) if error else None,
                    datetime.now().isoformat(),
                ))
                await db.commit()
                logger.info(f"Recorded run {run_id} ({command}, {status})")
                return True
        except Exception as e:
            logger.error(f"Failed to record run {run_id}: {e}")
            return False

    @staticmethod
    def _row_to_run(row) -> Dict[str, Any]:
        return {
            "id": row[0],
            "command": row[1],
            "config_digest": row[2],
            "status": row[3],
            "output_dir": row[4],
            "outputs": json.loads(row[5]) if row[5] else [],
            "error": json.loads(row[6]) if row[6] else None,
            "created_at": row[7],
            "finished_at": row[8],
        }

    async def get_run(self, run_id: str) -> Optional[Dict[str, Any]]:
        try:
            async with aiosqlite.connect(self.db_path) as db:
                async with db.execute("""
                    SELECT id, command, config_digest, status, output_dir, outputs, error,
                           created_at, finished_at
                    FROM runs WHERE id = ?
                """, (run_id,)) as cursor:
                    row = await cursor.fetchone()
                    return self._row_to_run(row) if row else None
        except Exception as e:
            logger.error(f"Failed to get run {run_id}: {e}")
            return None

    async def list_runs(self, limit: int = 50) -> List[Dict[str, Any]]:
        try:
            async with aiosqlite.connect(self.db_path) as db:
                async with db.execute("""
                    SELECT id, command, config_digest, status, output_dir, outputs, error,
                           created_at, finished_at
                    FROM runs ORDER BY created_at DESC, id LIMIT ?
                """, (limit,)) as cursor:
                    rows = await cursor.fetchall()
                    return [self._row_to_run(row) for row in rows]
        except Exception as e:
            logger.error(f"Failed to list runs: {e}")
            return []
