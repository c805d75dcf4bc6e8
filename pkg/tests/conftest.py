import numpy as np
import pytest

from catp.models import EncoderConfig
from catp.numerics import Rng
from catp.pipeline import CatpModel
from catp.synthetic import disk_image, random_image
from catp.weights import load_weights
from config.run_config import RunConfig

SEED = 20240917


@pytest.fixture
def desk_config() -> EncoderConfig:
    return EncoderConfig()


@pytest.fixture
def desk_weights(desk_config):
    return load_weights(None, desk_config, SEED)


@pytest.fixture
def desk_model(desk_config, desk_weights) -> CatpModel:
    return CatpModel(desk_config, desk_weights)


@pytest.fixture
def disk(desk_config) -> np.ndarray:
    return disk_image(desk_config.image_h, desk_config.image_w, Rng(SEED).derive("disk"))


@pytest.fixture
def noise_image(desk_config) -> np.ndarray:
    return random_image(desk_config.image_h, desk_config.image_w, Rng(SEED).derive("noise"))


@pytest.fixture
def run_config(tmp_path) -> RunConfig:
    return RunConfig(seed=SEED, output_dir=str(tmp_path / "out"))


@pytest.fixture(autouse=True)
def no_seed_override(monkeypatch):
    monkeypatch.delenv("CATP_SEED", raising=False)
