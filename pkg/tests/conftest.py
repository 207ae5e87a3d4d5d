"""Shared fixtures: one small synthesized dataset reused across test modules."""

import pytest

from cdp_authkit.experiment import DatasetConfig, load_dataset, synthesize_dataset

SMALL_CONFIG = DatasetConfig(n_templates=25, n_sym=12, seed=7)


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "small"
    synthesize_dataset(SMALL_CONFIG, out)
    return out


@pytest.fixture(scope="session")
def small_dataset(small_dataset_dir):
    return load_dataset(small_dataset_dir)
