import hashlib
import io
import json
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel

from backend import __version__
from backend.services.errors import DataError, ParseError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Execution details that never change what a run computes.
_DIGEST_EXCLUDE = {"output_dir", "workers"}


def config_digest(config: BaseModel | Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    if isinstance(config, BaseModel):
        payload = config.model_dump(mode="json")
    else:
        payload = dict(config)
    payload = {k: v for k, v in payload.items() if k not in _DIGEST_EXCLUDE}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def header_line(kind: str, digest: Optional[str], **extra: Any) -> str:
    fields = [f"schema={SCHEMA_VERSION}", f"version={__version__}", f"digest={digest or 'none'}"]
    fields += [f"{key}={value}" for key, value in extra.items()]
    return f"# eegdep {kind} {' '.join(fields)}\n"


def read_header(path: str) -> Dict[str, str]:
    """Parse the `# eegdep ...` provenance line of a CSV written by this service."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            first = f.readline()
    except UnicodeDecodeError as e:
        raise ParseError(f"file is not UTF-8 text: {e.reason}", path=path, byte=e.start)
    if not first.startswith("# eegdep"):
        return {}
    fields = first[1:].split()
    meta = {"kind": fields[1] if len(fields) > 1 else ""}
    for token in fields[2:]:
        key, _, value = token.partition("=")
        meta[key] = value
    return meta


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def output_error(error: OSError, path: str) -> DataError:
    return DataError(f"cannot write output: {error.strerror or error}", path=path)


class ExportService:
    """Writes self-describing pipeline outputs (JSON and CSV) into one directory."""

    def __init__(self, export_dir: str | None = None):
        self.export_dir = export_dir or os.getenv("EEGDEP_OUTPUT_DIR", "outputs")
        try:
            os.makedirs(self.export_dir, exist_ok=True)
        except OSError as e:
            raise output_error(e, self.export_dir)

    def path(self, filename: str) -> str:
        return os.path.join(self.export_dir, filename)

    def write_json(self, filename: str, kind: str, payload: Any, digest: Optional[str]) -> str:
        document = {
            "schema": f"eegdep.{kind}",
            "schema_version": SCHEMA_VERSION,
            "tool_version": __version__,
            "config_digest": digest,
            "data": _to_jsonable(payload),
        }
        file_path = self.path(filename)
        try:
            with open(file_path, "w", encoding="utf-8", newline="\n") as f:
                json.dump(document, f, indent=2, allow_nan=False)
                f.write("\n")
        except OSError as e:
            raise output_error(e, file_path)
        logger.info(f"Wrote {kind} JSON to {file_path}")
        return file_path

    def write_frame(self, filename: str, kind: str, frame: pd.DataFrame, digest: Optional[str]) -> str:
        file_path = self.path(filename)
        write_frame_csv(file_path, kind, frame, digest)
        logger.info(f"Wrote {kind} CSV ({len(frame)} rows) to {file_path}")
        return file_path

    def write_connectivity(self, filename: str, matrix: np.ndarray, channels: List[str],
                           digest: Optional[str]) -> str:
        """16x16 matrix with channel names as header row and first column."""
        frame = pd.DataFrame(matrix, index=list(channels), columns=list(channels))
        frame.index.name = "channel"
        return self.write_frame(filename, "connectivity", frame.reset_index(), digest)


def write_frame_csv(file_path: str, kind: str, frame: pd.DataFrame, digest: Optional[str],
                    **extra: Any) -> None:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    try:
        with open(file_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(header_line(kind, digest, **extra))
            f.write(buffer.getvalue())
    except OSError as e:
        raise output_error(e, file_path)


def load_json_document(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
