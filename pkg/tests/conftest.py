import numpy as np
import pytest

from ingrseg.masks import LabelMap
from ingrseg.toydata import make_dataset_fixture


@pytest.fixture(scope="session")
def fixture12(tmp_path_factory):
    """The deterministic 12-image dataset fixture, built once per session."""
    root = tmp_path_factory.mktemp("fixture12")
    manifest = make_dataset_fixture(root)
    return manifest, root


def random_labelmap(rng, h, w, num_classes, ignore_fraction=0.0):
    data = rng.integers(0, num_classes, size=(h, w)).astype(np.uint8)
    if ignore_fraction > 0:
        mask = rng.random((h, w)) < ignore_fraction
        data[mask] = 255
    return LabelMap(data)
