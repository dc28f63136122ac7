import pytest

from gaitbench.backbones import ArchConfig
from gaitbench.dataset import DatasetSpec, build_dataset

TINY_SPEC = dict(train_subjects=3, test_subjects=2, views=[0, 90], takes={"NM": 2, "BG": 1, "CL": 1},
                 num_frames=40, fps=15)
TINY_ARCH = dict(channels=[2, 3, 4], strips=4, dhs_channels=[2, 2], dhs_dim=4, head_hidden=8,
                 embedding_dim=4, dhs_window=12, dhs_stride=6)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    return build_dataset(DatasetSpec(**TINY_SPEC), root, seed=5, threads=1)


@pytest.fixture
def tiny_arch():
    return ArchConfig(**TINY_ARCH)
