import copy

import pytest

from axvit.axmul import build_luts, default_catalog
from axvit.data import synthetic_dataset
from axvit.nn import ModelConfig, ToyViT, calibrate_model
from axvit.train import TrainHyperparams, pretrain

# Harder than the CLI default so approximation errors flip some predictions
TEST_NOISE = 1.0


# Pretrained and calibrated toy ViT
def make_model(num_layers, dataset, seed=0, epochs=6):
    model = ToyViT(ModelConfig(num_layers=num_layers), seed=seed)
    pretrain(model, dataset, TrainHyperparams(learning_rate=2e-3, epochs=epochs, batch_size=64,
                                              data_fraction=1.0, seed=seed))
    calibrate_model(model, dataset.head(512))
    return model


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def luts(catalog):
    return build_luts(catalog)


@pytest.fixture(scope="session")
def train_data():
    return synthetic_dataset(2048, seed=0, noise=TEST_NOISE)


@pytest.fixture(scope="session")
def test_data():
    return synthetic_dataset(512, seed=1, noise=TEST_NOISE)


@pytest.fixture(scope="session")
def toy_model(train_data):
    return make_model(2, train_data)


@pytest.fixture(scope="session")
def toy_model3(train_data):
    return make_model(3, train_data)


# Private copy for tests that train
@pytest.fixture
def fresh_model(toy_model):
    return copy.deepcopy(toy_model)
