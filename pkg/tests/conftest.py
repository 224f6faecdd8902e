import numpy as np
import pytest

from grainforge.imaging import Image
from grainforge.rng import Rng


@pytest.fixture
def rng():
    return Rng(20240917)


def random_image(rng: Rng, width: int, height: int, channels: int = 3) -> Image:
    pixels = rng.integers(0, 256, (height, width, channels)).astype(np.uint8)
    return Image.from_array(pixels)


@pytest.fixture(scope="session")
def tiny_shape_dataset(tmp_path_factory):
    """Small on-disk shape dataset shared by CLI and training tests."""
    from grainforge.synthetic import generate_shape_dataset

    root = tmp_path_factory.mktemp("shapes")
    manifest, assignment = generate_shape_dataset(
        root, per_class_train=16, per_class_val=4, seed=3
    )
    return root, manifest, assignment
