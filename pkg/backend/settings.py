import os
import logging
from pathlib import Path

from dotenv import find_dotenv, load_dotenv

# Attempt to locate a .env file automatically. If not found, fall back to a path
# next to this package.
_env_path_str = find_dotenv(usecwd=True)
_env_path = Path(_env_path_str) if _env_path_str else Path()
if not _env_path_str or not _env_path.exists():
    _env_path = Path(__file__).resolve().parent / ".env"
load_dotenv(_env_path, override=False)

OUTPUT_DIR = os.getenv("EEGDEP_OUTPUT_DIR", "outputs")
UPLOAD_DIR = os.getenv("EEGDEP_UPLOAD_DIR", "/tmp/eegdep/uploads")
RUNS_DB_PATH = os.getenv("EEGDEP_RUNS_DB", "data/runs.db")
WORKERS = int(os.getenv("EEGDEP_WORKERS", "1"))
MAX_FILE_SIZE_MB = int(os.getenv("MAX_FILE_SIZE_MB", "25"))
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def configure_logging(level: str | None = None) -> None:
    """Configure root logging for an entry point (CLI, API start script)."""
    logging.basicConfig(level=(level or LOG_LEVEL).upper(), format=LOG_FORMAT)
