import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from derain.rainsim import DatasetSpec, make_dataset, load_pairs  # noqa: E402


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """25 eq3 pairs at 64x64: 20 train + 5 test."""
    root = tmp_path_factory.mktemp("toydata")
    make_dataset(DatasetSpec(count=25, size=64, model="eq3", seed=7), root)
    pairs = load_pairs(root)
    return {"dir": root, "train": pairs[:20], "test": pairs[20:]}
