import time

import numpy as np
import pytest

from emosteer.corpus import fixture_path, load_corpus
from emosteer.harness.ratings import ingest_ratings
from emosteer.harness.sweep import SweepConfig, run_sweep
from emosteer.steering import build_all_targets
from emosteer.transformer import ModelConfig, new_model


@pytest.fixture(scope="session")
def tiny_model():
    return new_model(ModelConfig(num_layers=2, hidden_dim=16, num_heads=4, vocab_size=256, max_context=128, seed=3))


@pytest.fixture(scope="session")
def default_model():
    return new_model(ModelConfig())


@pytest.fixture(scope="session")
def fixture_corpus():
    return load_corpus(fixture_path("fixture_corpus.tsv"))


@pytest.fixture(scope="session")
def default_vectors(default_model, fixture_corpus):
    return build_all_targets(default_model, fixture_corpus)


@pytest.fixture(scope="session")
def reference_ratings():
    return ingest_ratings(fixture_path("reference_ratings.tsv"))


@pytest.fixture(scope="session")
def timed_default_sweep(default_model, default_vectors):
    """The full default sweep, run once per session, with its wall time in seconds."""
    start = time.perf_counter()
    rows = run_sweep(SweepConfig(), model=default_model, vectors=default_vectors)
    return rows, time.perf_counter() - start


@pytest.fixture(scope="session")
def default_sweep(timed_default_sweep):
    return timed_default_sweep[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
