import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))  # for the oracles module

from convseq.data import read_classification_tsv, read_corpus_lines, tokenize

ASSETS = os.path.join(
    os.path.dirname(__file__), "..", "src", "convseq", "assets"
)


@pytest.fixture(scope="session")
def corpus_ids():
    ids = []
    for line in read_corpus_lines(os.path.join(ASSETS, "corpus.txt")):
        ids.extend(tokenize(line + "\n"))
    return ids


@pytest.fixture(scope="session")
def sentiment_rows():
    return list(read_classification_tsv(os.path.join(ASSETS, "sentiment_train.tsv")))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# One verdict line per acceptance criterion, echoed into the terminal
# summary so they stay visible under output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
