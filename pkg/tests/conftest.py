import numpy as np
import pytest
import torch

from wal.config import preset_config
from wal.data import Dataset, SynthConfig, sample_splits, synth_domain_pair
from wal.pipeline import TrainConfig

torch.set_num_threads(1)


TINY_TRAIN = dict(ep1=2, ep2=2, ep3=4, ep4=2, batch_size=64)


@pytest.fixture(scope="session")
def blob_pair():
    return synth_domain_pair(SynthConfig(M=4, dim=8, per_class_count=120, seed=7))


@pytest.fixture(scope="session")
def small_exp(blob_pair):
    source, target = blob_pair
    return sample_splits(source, target, N_s=300, N_t=60, N_val=100, seed=7)


@pytest.fixture()
def tiny_cfg():
    return TrainConfig(seed=0, **TINY_TRAIN)


@pytest.fixture(scope="session")
def desk_config():
    return preset_config("desk-blobs")


def make_dataset(X, classes, M, domain=0, name="t"):
    X = np.asarray(X, dtype=np.float32)
    Y = np.zeros((len(X), M), dtype=np.float32)
    Y[np.arange(len(X)), np.asarray(classes, dtype=int)] = 1.0
    return Dataset(X, Y, np.full(len(X), domain, np.uint8), M, name)
