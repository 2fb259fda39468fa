"""Shared fixtures: desk-scale dataset and trained models, built once per session."""

import numpy as np
import pytest

from physgen.dataio import dataset_codec, load_dataset, save_dataset
from physgen.diffusion import VPSchedule
from physgen.grf import generate_darcy_dataset
from physgen.scorenet import TrainConfig, train_unconditional

DESK_N = 16
DESK_S = 16
DESK_COUNT = 2000
DESK_SEED = 42
TRAIN_EPOCHS = 1000


def darcy_states(ds, codec, standardized=True):
    phys = np.stack([
        codec.flatten(ds.pressure[k], ds.permeability[k]) for k in range(ds.count)
    ])
    return codec.standardize(phys) if standardized else phys


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """2000-sample Darcy dataset at n=16, s=16 plus its manifest/codec."""
    path = tmp_path_factory.mktemp("desk") / "dataset"
    ds = generate_darcy_dataset(DESK_COUNT, DESK_N, DESK_S, seed=DESK_SEED)
    save_dataset(ds, path)
    ds, manifest = load_dataset(path)
    return {"ds": ds, "manifest": manifest, "codec": dataset_codec(manifest),
            "path": path}


@pytest.fixture(scope="session")
def test_dataset():
    """Held-out Darcy samples sharing the desk-scale generation parameters."""
    return generate_darcy_dataset(50, DESK_N, DESK_S, seed=905)


@pytest.fixture(scope="session")
def trained_model(desk_dataset):
    """Unconditional score model trained on the desk-scale dataset."""
    codec = desk_dataset["codec"]
    states = darcy_states(desk_dataset["ds"], codec)
    sched = VPSchedule()
    cfg = TrainConfig(learning_rate=1e-4, batch_size=128, epochs=TRAIN_EPOCHS, seed=7)
    net = train_unconditional(states, sched, cfg)
    return {"net": net, "sched": sched, "cfg": cfg, "states": states}
