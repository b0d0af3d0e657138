import numpy as np
import pytest

from lyrictrack.network import NetworkSpec, random_weights
from lyrictrack.posteriogram import PhonemeVocab, Posteriogram


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def table1():
    return NetworkSpec.table1()


@pytest.fixture(scope="session")
def weights(table1):
    return random_weights(table1, seed=7)


def random_posteriogram(rng, n_frames, n_classes=60, sharpness=3.0, blank_free=False):
    """Random log-posteriogram; with ``blank_free`` no row has blank as its argmax."""
    vocab = PhonemeVocab.default() if n_classes == 60 else PhonemeVocab.from_tokens([f"t{i}" for i in range(n_classes)])
    logits = rng.normal(0.0, 1.0, (n_frames, n_classes))
    logits[np.arange(n_frames), rng.integers(0, n_classes, n_frames)] += sharpness
    if blank_free:
        logits[:, vocab.blank_index] = logits.min(axis=1) - 1.0
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return Posteriogram(logp, 40.0, vocab)


# acceptance criteria report one line each; repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
