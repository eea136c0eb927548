import numpy as np
import pytest

from tiasu.corpus import Corpus, Utterance
from tiasu.synth import make_world, sample_corpus


@pytest.fixture(scope="session")
def content_world():
    return make_world("content_dominant", seed=1)


@pytest.fixture(scope="session")
def prosody_world():
    return make_world("prosody_dominant", seed=1)


@pytest.fixture(scope="session")
def small_corpus(content_world):
    return sample_corpus(content_world, 40, seed=3)


@pytest.fixture()
def toy_corpus():
    """Hand-built corpus with known speakers/labels and 8-frame payloads."""
    rng = np.random.default_rng(0)
    utts = []
    for i in range(20):
        utts.append(Utterance(
            id=f"u{i:03d}",
            text=f"w{i % 7} w{(i + 1) % 7} w{(i + 2) % 7}",
            label=i % 4,
            speaker=f"spk{i % 5}",
            speech=rng.normal(size=(8, 16)).astype(np.float32),
        ))
    return Corpus(tuple(utts), "toy")
