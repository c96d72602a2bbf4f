import numpy as np
import pytest

from fedsec.events import EventCorpus, EventSequence, generate_synthetic_corpus, split_dataset
from fedsec.neural.model import ModelConfig


def corpus_from_lists(rows, V):
    """``rows`` are event lists whose last entry is the label."""
    seqs = [EventSequence(f"m{k}", tuple(r[:-1]), r[-1]) for k, r in enumerate(rows)]
    return EventCorpus.from_sequences(seqs, V)


def random_corpus(rng, V, n, lo=2, hi=6):
    rows = [list(rng.integers(0, V, size=int(rng.integers(lo, hi + 1)))) for _ in range(n)]
    return corpus_from_lists([[int(e) for e in r] for r in rows], V)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(10, 300, seed=3)


@pytest.fixture(scope="session")
def small_split(small_corpus):
    return split_dataset(small_corpus, (0.7, 0.1, 0.2), seed=0)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig(10, embed_dim=4, hidden_size=6, lanes=2, learning_rate=1.0, batch_size=16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
