import json

import numpy as np
import pytest

from backend.models.config_models import SynthConfig
from backend.models.signal_models import CHANNELS, Epoch, FeatureMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tiny_synth():
    """Two subjects per class, two half-second epochs each."""
    return SynthConfig(subjects_per_class=2, epochs_per_subject=2, epoch_len_s=0.5, seed=7)


@pytest.fixture
def noise_epoch(rng):
    def make(subject_id="S1", label="MDD", length=500, epoch_index=0):
        return Epoch(subject_id=subject_id, label=label, fs=250.0,
                     samples=rng.normal(size=(len(CHANNELS), length)), epoch_index=epoch_index)
    return make


@pytest.fixture
def table_factory():
    """Feature matrix from a value array; subjects get `epochs` consecutive rows each."""
    def make(values, names=None, subjects=None, labels=None, epochs=1):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        n_rows, n_cols = values.shape
        names = names or [f"f{i}" for i in range(n_cols)]
        if subjects is None:
            subjects = [f"S{i // epochs}" for i in range(n_rows)]
        if labels is None:
            labels = ["MDD" if (i // epochs) % 2 == 0 else "NC" for i in range(n_rows)]
        index = [i % epochs for i in range(n_rows)]
        return FeatureMatrix(values=values, feature_names=list(names), subject_ids=list(subjects),
                             labels=list(labels), epoch_index=index)
    return make


@pytest.fixture
def block_names():
    """A reduced mix of linear, nonlinear and PLI column names."""
    return (["variance@Fp1", "mobility@C3", "ar_peak_freq@O2", "mean_square@T4"]
            + ["c0@Fp1", "svden@C3", "spec_ent@P4"]
            + ["pli:C3-P3", "pli:F3-F7", "pli:C4-P4"])


@pytest.fixture
def separable_table(table_factory, block_names, rng):
    """Six subjects x four epochs; two PLI columns carry the class."""
    n_subjects, epochs = 6, 4
    labels = ["MDD" if s % 2 == 0 else "NC" for s in range(n_subjects) for _ in range(epochs)]
    values = rng.normal(size=(n_subjects * epochs, len(block_names)))
    signal = np.array([1.5 if lab == "MDD" else -1.5 for lab in labels])
    values[:, block_names.index("pli:C3-P3")] += signal
    values[:, block_names.index("pli:F3-F7")] += signal
    return table_factory(values, names=block_names, labels=labels, epochs=epochs)


@pytest.fixture
def config_file(tmp_path):
    """Writes a small run configuration and returns its path."""
    def write(**overrides):
        config = {
            "seed": 3,
            "dataset": {"synth": {"subjects_per_class": 3, "epochs_per_subject": 2, "seed": 3}},
            "selection": {"method": "relieff", "n_select": 6, "relieff_k": 1},
            "models": [{"kind": "NB"}, {"kind": "KNN"}],
            "output_dir": str(tmp_path / "outputs"),
        }
        config.update(overrides)
        path = tmp_path / "run.json"
        path.write_text(json.dumps(config))
        return str(path)
    return write
