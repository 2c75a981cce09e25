import pytest

from wmc.data_io import BodyMap, load_manifest
from wmc.model import FusionModelConfig
from wmc.synthetic import make_synthetic_dataset


@pytest.fixture(scope="session")
def body_map():
    return BodyMap.default()


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic")
    make_synthetic_dataset(out, samples_per_class=16, image_size=32, seed=2024)
    return out


@pytest.fixture(scope="session")
def synthetic_records(synthetic_dir):
    return load_manifest(synthetic_dir / "manifest.csv")


def small_config(**overrides):
    """Reduced geometry so unit tests stay fast; defaults overridable."""
    base = dict(
        classes=("D", "P", "S", "V"),
        mode="multimodal",
        image_size=32,
        extractor_channels=(4, 8),
        caps_n_in=4,
        caps_d_in=2,
        caps_n_out=3,
        caps_d_out=4,
        d_img=16,
        hidden_dim=8,
        head_sizes=(16,),
        dropout=0.0,
        batch_size=8,
        epochs=2,
        seed=7,
        split=1.0,
    )
    base.update(overrides)
    return FusionModelConfig(**base)
