"""Shared random-instance helpers for the test suite."""
import numpy as np
import pytest

from indexalloc.plates import AssetModel
from indexalloc.station import StationModel, check_assumption1


def random_station(rng, pool=None, stable=True):
    """Station with mu(a) = a/(a+nu) * mubar, resampled until stable."""
    for _ in range(200):
        S = int(pool) if pool else int(rng.integers(4, 12))
        a = np.arange(S + 1, dtype=float)
        nu = float(rng.uniform(0.5, 8.0))
        mubar = float(rng.uniform(1.0, 4.0))
        mu = a / (a + nu) * mubar
        lam = float(rng.uniform(0.3, 0.85) * mu[-1])
        st = StationModel(arrival_rate=lam, mu=mu)
        if not stable or check_assumption1([st], S).passed:
            return st
    raise RuntimeError("could not draw a stable station")


def random_asset(rng, max_level=None, top_state=None):
    """Separable asset with concave up / convex down rate profiles."""
    R = int(max_level) if max_level else int(rng.integers(2, 6))
    A = int(top_state) if top_state else int(rng.integers(3, 11))
    phi = float(rng.uniform(0.75, 5.0))
    xi = rng.uniform(0.5, 2.0, size=A)
    eta = rng.uniform(0.5, 2.0, size=A)
    d = np.sort(rng.uniform(0.0, 1.0, size=A + 1))
    asset = AssetModel.separable(
        phi,
        lambda n: float(xi[n]),
        lambda n: float(eta[n - 1]),
        lambda n: float(d[n]),
        max_level=R,
        top_state=A,
    )
    assert asset.validate().passed
    return asset


def random_monotone_policy(rng, n_states, max_level):
    """Nondecreasing levels in [1, max_level] (positive so state 0 is
    reachable downward from everywhere)."""
    steps = rng.integers(0, 2, size=n_states)
    levels = np.minimum(1 + np.cumsum(steps), max_level)
    return levels.astype(int)


@pytest.fixture
def rng():
    return np.random.default_rng(20240824)
