import numpy as np
import pytest

from koopgp import (
    make_corpus,
    predator_prey_system,
    standardize,
    window_dataset,
)


@pytest.fixture(scope="session")
def pp_small_set():
    """Small standardized predator-prey training set shared across tests."""
    corpus = make_corpus(predator_prey_system(), 8, [[0.2, 2.0], [0.2, 1.0]], 3.0, 16, seed=11)
    raw = window_dataset(corpus, 1, 5, 4, stride=4)
    std_set, std = standardize(raw)
    return std_set


@pytest.fixture(scope="session")
def pp_tiny_set():
    """Tiny set (distinct windows per pair) for M=N sparse checks."""
    corpus = make_corpus(predator_prey_system(), 10, [[0.2, 2.0], [0.2, 1.0]], 3.0, 8, seed=4)
    raw = window_dataset(corpus, 1, 4, 1, stride=1)
    std_set, _ = standardize(raw)
    return std_set


def rng(seed=0):
    return np.random.default_rng(seed)
