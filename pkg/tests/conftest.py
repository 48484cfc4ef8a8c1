import os

import pytest

from stfuse.synth import SynthSpec, generate_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small shared synthetic dataset: 4 classes, 3 train / 2 test clips each."""
    root = tmp_path_factory.mktemp("tiny_data")
    spec = SynthSpec(train_clips_per_class=3, test_clips_per_class=2, seed=123)
    manifest = generate_dataset(spec, str(root))
    return manifest, str(root)


@pytest.fixture(scope="session")
def tiny_flow_cache(tmp_path_factory):
    return str(tmp_path_factory.mktemp("flowcache"))
