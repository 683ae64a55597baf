import numpy as np
import pytest

import froehlich_exact
import harness
import lattice


@pytest.fixture
def rng():
    return np.random.default_rng(harness.default_seed)


@pytest.fixture
def small_lp():
    # four sites on a torus of side 4, two phonon modes k = +-1/4
    return harness.small_instance()


@pytest.fixture
def small_basis(small_lp):
    def make(N=2, n_max=4):
        params = froehlich_exact.FroehlichParams(N=N, alpha=small_lp.alpha, grid=small_lp.grid,
                                                 modes=small_lp.modes, n_max=n_max)
        return froehlich_exact.ManyBodyBasis(params)
    return make


@pytest.fixture
def fine_grid():
    return lattice.build_grid(1, 1.0, 32)
