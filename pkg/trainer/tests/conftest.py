import pytest

from nhalf_trainer import TrainConfig, load_split, make_toy_dataset, toy_architecture


@pytest.fixture(scope="session")
def toy_manifests(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return make_toy_dataset(root, per_class=100, seed=0)


@pytest.fixture(scope="session")
def toy_data(toy_manifests):
    arch = toy_architecture()
    train_manifest, test_manifest = toy_manifests
    return load_split(train_manifest, arch.input_size), load_split(test_manifest, arch.input_size)


@pytest.fixture
def quick_config():
    """Short run used where only mechanics are under test."""
    return TrainConfig(architecture=toy_architecture(), epochs=3, seed=0)
