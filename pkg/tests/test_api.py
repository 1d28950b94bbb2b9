import os

import pytest
from fastapi.testclient import TestClient

from backend import main, settings
from backend.services.dataset_service import dataset_frame, synth_dataset, write_dataset
from backend.services.export_service import write_frame_csv
from backend.services.run_store_service import RunStoreService

SMALL_SYNTH = {"dataset": {"synth": {"subjects_per_class": 2, "epochs_per_subject": 2, "epoch_len_s": 0.5}}}


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "OUTPUT_DIR", str(tmp_path / "outputs"))
    monkeypatch.setattr(settings, "UPLOAD_DIR", str(tmp_path / "uploads"))
    monkeypatch.setattr(main, "run_store", RunStoreService(str(tmp_path / "db" / "runs.db")))
    with TestClient(main.app) as c:
        yield c


@pytest.fixture
def epochs_csv(tmp_path, tiny_synth):
    return write_dataset(synth_dataset(tiny_synth), str(tmp_path / "epochs.csv"))


def test_root_and_health(client):
    assert client.get("/").json()["version"]
    assert client.get("/health").json() == {"status": "ok"}


def test_upload_validates_and_stores(client, epochs_csv):
    with open(epochs_csv, "rb") as f:
        response = client.post("/upload", files={"file": ("epochs.csv", f, "text/csv")})
    assert response.status_code == 200
    body = response.json()
    assert body["filename"] == "epochs.csv"
    assert body["subjects_per_label"] == {"MDD": 2, "NC": 2}
    assert body["epochs"] == 8
    assert os.path.exists(body["path"])


def test_upload_too_large(client, epochs_csv, monkeypatch):
    monkeypatch.setattr(settings, "MAX_FILE_SIZE_MB", 0)
    with open(epochs_csv, "rb") as f:
        response = client.post("/upload", files={"file": ("epochs.csv", f, "text/csv")})
    assert response.status_code == 413


def test_upload_with_unknown_label_is_rejected(client, tmp_path, tiny_synth):
    frame = dataset_frame(synth_dataset(tiny_synth))
    frame.loc[0, "label"] = "BIPOLAR"
    path = str(tmp_path / "bad.csv")
    write_frame_csv(path, "epochs", frame, None)
    with open(path, "rb") as f:
        response = client.post("/upload", files={"file": ("bad.csv", f, "text/csv")})
    assert response.status_code == 422
    assert response.json()["detail"]["error"] == "ParseError"
    assert os.listdir(settings.UPLOAD_DIR) == []


def test_synth_run_is_recorded(client):
    response = client.post("/runs/synth", json=SMALL_SYNTH)
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "succeeded"
    assert len(body["outputs"]) == 1
    assert os.path.exists(body["outputs"][0])

    runs = client.get("/runs").json()["runs"]
    assert [r["id"] for r in runs] == [body["id"]]
    stored = client.get(f"/runs/{body['id']}").json()
    assert stored["command"] == "synth"
    assert stored["config_digest"] == body["config_digest"]
    assert stored["error"] is None


def test_extract_from_uploaded_file(client, epochs_csv):
    with open(epochs_csv, "rb") as f:
        uploaded = client.post("/upload", files={"file": ("epochs.csv", f, "text/csv")}).json()
    response = client.post("/runs/extract", json={"dataset": {"path": uploaded["path"]}})
    assert response.status_code == 200
    assert response.json()["outputs"][0].endswith("features.csv")


@pytest.mark.parametrize("config", [{"workers": 0}, {"seed": "abc"}, {"selection": {"n_select": 0}}])
def test_invalid_config_is_a_bad_request(client, config):
    response = client.post("/runs/synth", json=config)
    assert response.status_code == 400
    assert response.json()["detail"]["error"] == "ConfigError"


@pytest.mark.parametrize("command", ["train", "run"])
def test_unknown_command(client, command):
    assert client.post(f"/runs/{command}", json=SMALL_SYNTH).status_code == 404


def test_unknown_run(client):
    assert client.get("/runs/does-not-exist").status_code == 404


def test_failed_run_is_recorded(client):
    response = client.post("/runs/eval", json=SMALL_SYNTH)
    assert response.status_code == 422
    assert response.json()["detail"]["error"] == "DataError"
    (run,) = client.get("/runs").json()["runs"]
    assert run["status"] == "failed"
    assert run["command"] == "eval"
    assert run["error"]["context"]["operation"] == "eval"


def test_upload_that_is_not_utf8_is_rejected(client):
    response = client.post("/upload", files={"file": ("epochs.csv", b"\xff\xfe\x81\x82\n\x83", "text/csv")})
    assert response.status_code == 422
    assert response.json()["detail"]["error"] == "ParseError"
    assert os.listdir(settings.UPLOAD_DIR) == []


@pytest.mark.parametrize("path", ["/etc/passwd", "{uploads}/../epochs.csv"])
def test_dataset_path_outside_uploads(client, epochs_csv, path):
    path = path.format(uploads=settings.UPLOAD_DIR)
    response = client.post("/runs/extract", json={"dataset": {"path": path}})
    assert response.status_code == 400
    assert response.json()["detail"]["error"] == "ConfigError"
    assert client.get("/runs").json()["runs"] == []
