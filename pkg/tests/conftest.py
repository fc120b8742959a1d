import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from alseq.corpus import build_corpus
from alseq.embeddings import separated_means, synth_embeddings
from alseq.synth import SynthCorpusSpec, make_synthetic_corpus


@pytest.fixture(scope="session")
def nine_token_sentence_corpus():
    """Nine tokens; a one-token Disease span and a two-token Chemical span.

    Positive token indices are {0, 3, 4}.
    """
    rows = [
        ("Nausea", "B-Disease"),
        ("follows", "O"),
        ("from", "O"),
        ("lithium", "B-Chemical"),
        ("carbonate", "I-Chemical"),
        ("without", "O"),
        ("clear", "O"),
        ("prior", "O"),
        ("warning", "O"),
    ]
    return build_corpus([rows])


@pytest.fixture(scope="session")
def small_corpus():
    return make_synthetic_corpus(
        SynthCorpusSpec(n_sentences=80, entity_classes=("X", "Y")), seed=11
    )


@pytest.fixture(scope="session")
def small_embeddings(small_corpus):
    spec = separated_means(("X", "Y"), dim=8, separation=7.0, seed=1)
    return synth_embeddings(small_corpus, spec, seed=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
