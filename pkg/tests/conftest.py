import numpy as np
import pytest

from msda.data_model import LabeledDataset
from msda.suffstats import compute_stats


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance runs (deselect with -m 'not slow')")


def random_dataset(rng, n=40, p=6, K=3, shift=1.0, informative=None):
    """Balanced Gaussian classes; class k is shifted on the first features."""
    informative = p if informative is None else informative
    labels = np.arange(n) % K + 1
    X = rng.standard_normal((n, p))
    for k in range(2, K + 1):
        X[labels == k, :informative] += shift * rng.standard_normal(informative)
    return LabeledDataset(X, labels, K)


def proximal_gradient(stats, lam, iters=20_000, tol=1e-13):
    """Independent solver: proximal gradient on the full objective.

    Step 1/L with L the largest eigenvalue of Σ̂; the prox is the row-wise
    group soft-threshold at λ/L.
    """
    S = stats.cov.dense()
    delta = stats.delta
    L = float(np.linalg.eigvalsh(S).max())
    theta = np.zeros_like(delta)
    for _ in range(iters):
        step = theta - (S @ theta - delta) / L
        norms = np.linalg.norm(step, axis=1, keepdims=True)
        shrink = np.maximum(0.0, 1.0 - (lam / L) / np.where(norms > 0, norms, np.inf))
        new = step * shrink
        if np.max(np.abs(new - theta)) < tol:
            theta = new
            break
        theta = new
    return theta


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def make_dataset():
    return random_dataset


@pytest.fixture
def convex_oracle():
    return proximal_gradient


@pytest.fixture
def small_stats(rng):
    return compute_stats(random_dataset(rng, n=40, p=6, K=3))


@pytest.fixture
def hand_dataset():
    """Two classes in the plane with μ1 = (1,0), μ2 = (1,2) and Σ̂ = I."""
    X = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [1.0, 3.0]])
    return LabeledDataset(X, np.array([1, 1, 2, 2]), 2)
