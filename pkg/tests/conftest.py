"""Shared fixtures: small fitted GPs, a tiny linear classification problem."""

import numpy as np
import pytest

from bayesattack.data import make_synthetic_linear
from bayesattack.gp import KernelHyperparams, MaternGP


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fitted_gp():
    """A 2-d GP fit on 12 points of a smooth function."""
    rng = np.random.default_rng(7)
    X = rng.uniform(0.0, 1.0, size=(12, 2))
    y = np.sin(3.0 * X[:, 0]) + np.cos(2.0 * X[:, 1])
    return MaternGP(n_restarts=2, random_state=0).fit(X, y)


@pytest.fixture
def fixed_gp():
    """A 1-d GP with pinned hyperparameters (no fitting, raw values)."""
    hyper = KernelHyperparams(mu0=0.0, theta0=1.0, lengthscales=np.array([0.3]), noise_var=1e-4)
    rng = np.random.default_rng(3)
    X = rng.uniform(0.0, 1.0, size=(8, 1))
    y = np.sin(5.0 * X[:, 0])
    return MaternGP(hyperparams=hyper).fit(X, y)


@pytest.fixture
def linear_problem():
    return make_synthetic_linear(dim=6, num_classes=3, count=60, seed=11)
