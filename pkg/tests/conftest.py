from __future__ import annotations

import pytest

from sensepipe.filter_chain import load_labels
from sensepipe.synth import CorpusSpec, generate_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """400-record planted corpus shared across the suite (images included)."""
    out = tmp_path_factory.mktemp("small-corpus")
    return generate_corpus(CorpusSpec(n_records=400, seed=11), out)


@pytest.fixture(scope="session")
def small_truth(small_corpus):
    return load_labels(small_corpus.truth_path)


@pytest.fixture(scope="session")
def small_truth_answers(small_truth):
    return {pid: obj.get("answers", {}) for pid, obj in small_truth.items()}
