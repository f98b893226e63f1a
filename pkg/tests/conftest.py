import os
import sys
from dataclasses import replace

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from climate import ClimateModel, SeaSample, fit_climate, gauss_legendre  # noqa: E402
from hydro_oracle import Backend, OracleSource  # noqa: E402
from settings import reset_settings  # noqa: E402
from surrogate import QbcConfig, train_bundle  # noqa: E402
from wec_types import FrequencyGrid  # noqa: E402


@pytest.fixture(autouse=True)
def _clean_settings():
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def coarse_grid():
    return FrequencyGrid.uniform(12, 0.3, 2.0)


@pytest.fixture
def toy_source():
    return OracleSource(Backend.TOY)


@pytest.fixture
def reference_source():
    return OracleSource(Backend.REFERENCE, modes=20, exterior_modes=20)


def single_node_climate(hs: float = 2.0, tp: float = 8.0) -> ClimateModel:
    """One year, one sea state carrying all the probability mass."""
    return ClimateModel(
        years=(1,),
        hs_nodes=np.array([hs]),
        tp_nodes=np.array([tp]),
        hs_weights=np.array([1.0]),
        tp_weights=np.array([1.0]),
        pdf=np.ones((1, 1, 1)),
        prob=np.ones((1, 1, 1)),
    )


@pytest.fixture
def tiny_climate():
    rng = np.random.default_rng(7)
    samples = [SeaSample(1, float(h), float(t))
               for h, t in zip(rng.uniform(1.0, 3.0, 40), rng.uniform(6.0, 10.0, 40))]
    return fit_climate(samples, n_gq=4)


@pytest.fixture
def uniform_climate():
    """Two years with flat masses on a 3x3 grid."""
    hs, hs_w = gauss_legendre(3, 0.5, 4.0)
    tp, tp_w = gauss_legendre(3, 5.0, 12.0)
    prob = np.full((2, 3, 3), 1.0 / 9.0)
    return ClimateModel((1, 2), hs, tp, hs_w, tp_w, prob.copy(), prob)


def quick_config(kind: str, **overrides) -> QbcConfig:
    """Small committees and pools that train in seconds."""
    base = QbcConfig(kind=kind, committee_size=2, pool_size=60, batch_size=4, interior_points=8,
                     hidden=(8,), k_max=0, var_tol=1e9, mse_tol=1e9, epochs=40, minibatch=16,
                     patience=10)
    return replace(base, **overrides)


@pytest.fixture(scope="session")
def small_grid():
    return FrequencyGrid.uniform(5, 0.4, 1.6)


@pytest.fixture(scope="session")
def toy_bundle(small_grid):
    return train_bundle(OracleSource(Backend.TOY), small_grid, quick_config("one_body"),
                        quick_config("two_body"), seed=0, n_jobs=1)
