"""Shared fixtures: converged steady states reused across test modules.

The large-lattice runs cost tens of seconds each, so they are session
scoped; tests must not mutate the returned states in place.
"""

import numpy as np
import pytest

from coagsim import dynamics, kernels, lattice


def fresh_state(d, n_max, fill=0.0):
    lat = lattice.LatticeIndex(d, n_max)
    n = np.full(lat.size, float(fill))
    return dynamics.PopulationState(lat, n)


def converge(d, n_max, kernel, entries, tol=1e-8, **kw):
    src = dynamics.SourceSpec(tuple(entries))
    state, report = dynamics.integrate_to_steady_state(
        fresh_state(d, n_max), kernel, src, tol=tol, **kw
    )
    assert report.converged, report.message
    return state, report, src


@pytest.fixture(scope="session")
def constant_run():
    """d=2 constant kernel, asymmetric source (2, 1), n_max=128, tol=1e-8."""
    state, report, src = converge(
        2, 128, kernels.constant(1.0), [((1, 0), 2.0), ((0, 1), 1.0)],
        reproducible=True,
    )
    return {"state": state, "report": report, "source": src,
            "kernel": kernels.constant(1.0), "rates": (2.0, 1.0)}


@pytest.fixture(scope="session")
def quad_source_run():
    """Same system with all source rates quadrupled."""
    state, report, src = converge(
        2, 128, kernels.constant(1.0), [((1, 0), 8.0), ((0, 1), 4.0)]
    )
    return {"state": state, "report": report, "source": src,
            "kernel": kernels.constant(1.0), "rates": (8.0, 4.0)}


@pytest.fixture(scope="session")
def brownian_run():
    """d=2 Brownian kernel (gamma=0, p=1/3), same asymmetric source."""
    kern = kernels.brownian(1.0, (1.0, 1.0))
    state, report, src = converge(
        2, 128, kern, [((1, 0), 2.0), ((0, 1), 1.0)]
    )
    return {"state": state, "report": report, "source": src, "kernel": kern,
            "rates": (2.0, 1.0)}


@pytest.fixture(scope="session")
def symmetric_run():
    """d=2 constant kernel with exchange-symmetric source (1, 1)."""
    state, report, src = converge(
        2, 64, kernels.constant(1.0), [((1, 0), 1.0), ((0, 1), 1.0)]
    )
    return {"state": state, "report": report, "source": src,
            "kernel": kernels.constant(1.0), "rates": (1.0, 1.0)}


@pytest.fixture(scope="session")
def small_run():
    """Cheap d=1 additive-free run for unit tests that need stationarity."""
    state, report, src = converge(1, 32, kernels.constant(1.0), [((1,), 1.0)])
    return {"state": state, "report": report, "source": src,
            "kernel": kernels.constant(1.0), "rates": (1.0,)}
