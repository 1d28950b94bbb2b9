from fastapi import FastAPI, File, UploadFile, HTTPException, Body
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from typing import Any, Dict, Optional
import os
import logging
import uuid

from backend import __version__, settings
from backend.services.dataset_service import load_epochs_csv
from backend.services.errors import ConfigError, PipelineError
from backend.services.pipeline_service import PipelineService, parse_config
from backend.services.run_store_service import RunStoreService

logger = logging.getLogger(__name__)

app = FastAPI(title="eegdep", version=__version__)

app.add_middleware(
    CORSMiddleware,
    allow_origin_regex=".*",  # match any origin and echo it back
    allow_credentials=True,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["Content-Type", "Authorization"],
)

os.makedirs(settings.UPLOAD_DIR, exist_ok=True)

run_store = RunStoreService(settings.RUNS_DB_PATH)

# Stages a client may start; "run" chains them and stays CLI-only.
API_COMMANDS = ("synth", "extract", "select", "eval", "grid", "stats")

HTTP_STATUS = {2: 400, 3: 422, 4: 500}


def http_error(error: PipelineError) -> HTTPException:
    return HTTPException(status_code=HTTP_STATUS.get(error.exit_code, 500), detail=error.to_dict())


def check_dataset_path(config: Dict[str, Any]) -> None:
    """Clients may only point a run at files they uploaded."""
    dataset = (config or {}).get("dataset")
    path = dataset.get("path") if isinstance(dataset, dict) else None
    if path is None:
        return
    upload_dir = os.path.realpath(settings.UPLOAD_DIR)
    resolved = os.path.realpath(str(path))
    if os.path.commonpath([upload_dir, resolved]) != upload_dir:
        raise ConfigError("dataset path must be a file returned by /upload", path=str(path))


@app.on_event("startup")
async def startup_event():
    logger.info("FastAPI server is starting up...")
    await run_store.init_database()


@app.get("/")
def root():
    return {"message": "eegdep backend is working", "version": __version__}


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/upload")
async def upload_epochs(file: UploadFile = File(...)):
    max_size_mb = settings.MAX_FILE_SIZE_MB
    os.makedirs(settings.UPLOAD_DIR, exist_ok=True)
    contents = await file.read()
    if len(contents) > max_size_mb * 1024 * 1024:
        raise HTTPException(status_code=413, detail=f"File {file.filename} exceeds {max_size_mb}MB limit.")
    name = os.path.basename(file.filename or "upload.csv")
    file_path = os.path.join(settings.UPLOAD_DIR, f"{uuid.uuid4().hex}_{name}")
    with open(file_path, "wb") as f:
        f.write(contents)
    try:
        dataset = await run_in_threadpool(load_epochs_csv, file_path)
    except PipelineError as e:
        os.remove(file_path)
        logger.error(f"Upload {name} rejected: {e}")
        raise http_error(e)
    logger.info(f"Stored upload {name} at {file_path}")
    return {"path": file_path, "filename": name, **dataset.summary()}


@app.post("/runs/{command}")
async def start_run(command: str, config: Optional[Dict[str, Any]] = Body(default=None)):
    if command not in API_COMMANDS:
        raise HTTPException(status_code=404, detail=f"Unknown command '{command}'")
    run_id = str(uuid.uuid4())
    output_dir = os.path.join(settings.OUTPUT_DIR, "runs", run_id)
    try:
        check_dataset_path(config)
        pipeline_config = parse_config({**(config or {}), "output_dir": output_dir})
        service = PipelineService(pipeline_config)
    except PipelineError as e:
        raise http_error(e)
    try:
        # CPU bound.
        outputs = await run_in_threadpool(service.execute, command)
    except PipelineError as e:
        logger.error(f"Run {run_id} ({command}) failed: {e}")
        await run_store.record_run(run_id, command, service.digest, output_dir, "failed", error=e.to_dict())
        raise http_error(e)
    await run_store.record_run(run_id, command, service.digest, output_dir, "succeeded", outputs=outputs)
    return {"id": run_id, "command": command, "status": "succeeded",
            "config_digest": service.digest, "outputs": outputs}


@app.get("/runs")
async def get_runs():
    return {"runs": await run_store.list_runs()}


@app.get("/runs/{run_id}")
async def get_run(run_id: str):
    run = await run_store.get_run(run_id)
    if run is None:
        raise HTTPException(status_code=404, detail=f"Run {run_id} not found")
    return run
