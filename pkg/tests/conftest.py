import pytest

from holobind.cli import DEFAULT_DATA_SEED
from holobind.trainer import TrainConfig, synth_dataset, train_toy_model


@pytest.fixture(scope="session")
def dataset():
    """The committed synthetic task shared across audit tests."""
    return synth_dataset(DEFAULT_DATA_SEED)


@pytest.fixture(scope="session")
def trained(dataset):
    """One full training run per session; reused by every audit."""
    model, metrics = train_toy_model(dataset, TrainConfig())
    return model, metrics
