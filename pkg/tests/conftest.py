import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import promptcount as pc


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_records() -> list:
    """Twelve small scenes, four per class, counts 3 to 5."""
    spec = pc.SyntheticSpec(
        classes=("circle", "square", "triangle"),
        images_per_class=4,
        count_min=3,
        count_max=5,
    )
    return pc.synthesize_dataset(spec, seed=11)


@pytest.fixture(scope="session")
def tiny_split(tiny_records) -> pc.DatasetSplit:
    return pc.split_by_class_names(tiny_records, ["circle"], ["square"], ["triangle"])


@pytest.fixture(scope="session")
def tiny_detector(tiny_records) -> pc.SyntheticDetector:
    return pc.SyntheticDetector.for_records(tiny_records)


@pytest.fixture(scope="session")
def tiny_classifier(tiny_records) -> pc.PatchClassifier:
    data = pc.build_training_set(tiny_records, rng_seed=0, patch_side=32)
    backbone = pc.DeskFeaturizer()
    head, _ = pc.train_filter(data, backbone, pc.FilterConfig(epochs=150))
    return pc.PatchClassifier(backbone, head)


@pytest.fixture(scope="session")
def tiny_pairs(tiny_records, tiny_detector, tiny_classifier) -> dict:
    return pc.mine_exemplars(
        tiny_records, tiny_detector, tiny_classifier, pc.PipelineConfig(patch_side=16)
    )
