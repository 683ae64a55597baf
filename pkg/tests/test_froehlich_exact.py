from math import comb

import numpy as np
import pytest
from numpy.testing import assert_allclose

import fock
import froehlich_exact
import landau_pekar
import lattice


def test_params_are_validated(small_lp):
    with pytest.raises(ValueError):
        froehlich_exact.FroehlichParams(N=0, alpha=1.0, grid=small_lp.grid, modes=small_lp.modes, n_max=2)
    with pytest.raises(ValueError):
        froehlich_exact.FroehlichParams(N=2, alpha=-1.0, grid=small_lp.grid, modes=small_lp.modes, n_max=2)


def test_basis_dimensions(small_basis):
    basis = small_basis(N=2, n_max=3)
    assert basis.particle_dim == comb(2 + 4 - 1, 2)
    assert basis.phonon.dim == comb(3 + 2, 2)
    assert basis.dim == 100
    assert np.all(basis.particle_states.sum(axis=1) == 2)


def test_kinetic_matrix_spectrum(small_lp):
    T = froehlich_exact.kinetic_matrix(small_lp.grid)
    assert_allclose(T, T.conj().T, atol=1e-12)
    expected = np.sort(lattice.particle_momenta(small_lp.grid))
    assert_allclose(np.linalg.eigvalsh(T), expected, atol=1e-12)


def test_hamiltonian_is_hermitian(small_basis):
    basis = small_basis(N=3, n_max=3)
    H = froehlich_exact.assemble_froehlich(basis.params, basis)
    assert H.dimension == basis.dim
    assert H.hermiticity_defect() < 1e-12


def test_dimension_guard(small_basis):
    basis = small_basis(N=2, n_max=3)
    with pytest.raises(froehlich_exact.DimensionOverflowError) as error:
        froehlich_exact.assemble_froehlich(basis.params, basis, limit=10)
    assert error.value.required_bytes > 0
    assert isinstance(error.value, MemoryError)


def test_pekar_product_is_normalized(small_lp, small_basis):
    basis = small_basis(N=3, n_max=6)
    state = froehlich_exact.pekar_product_state(basis, small_lp.psi, small_lp.phi)
    assert_allclose(state.norm(), 1.0, atol=1e-10)


def test_product_state_observables_vanish(small_lp, small_basis):
    basis = small_basis(N=3, n_max=6)
    state = froehlich_exact.pekar_product_state(basis, small_lp.psi, small_lp.phi)
    gamma = froehlich_exact.reduced_density_particle(state)
    assert_allclose(np.trace(gamma).real, 1.0, atol=1e-12)
    observables = froehlich_exact.convergence_observables(state, small_lp.psi, small_lp.phi)
    for name in ('a', 'b', 'trace_distance', 'sobolev_trace_distance'):
        assert observables[name] < 1e-9, name


def test_decoupled_product_energy():
    grid = lattice.build_grid(1, 4.0, 4)
    modes = lattice.momentum_modes(grid, uv_cutoff=0.25)
    params = froehlich_exact.FroehlichParams(N=2, alpha=0.0, grid=grid, modes=modes, n_max=6)
    basis = froehlich_exact.ManyBodyBasis(params)
    H = froehlich_exact.assemble_froehlich(params, basis)
    psi = landau_pekar.plane_wave_psi(grid, 1)
    phi = landau_pekar.gaussian_phi(modes, amplitude=0.1)
    state = froehlich_exact.pekar_product_state(basis, psi, phi)
    f = np.sqrt(2) * grid.L ** -0.5 * phi
    expected = 2 * (2 * np.pi / grid.L) ** 2 + np.sum(np.abs(f) ** 2)
    assert_allclose(froehlich_exact.expectation(state, H), expected, rtol=1e-10)


def test_exact_flow_conserves_norm_and_energy(small_lp, small_basis):
    basis = small_basis(N=2, n_max=4)
    H = froehlich_exact.assemble_froehlich(basis.params, basis)
    state = froehlich_exact.pekar_product_state(basis, small_lp.psi, small_lp.phi)
    trajectory = froehlich_exact.evolve_exact(state, H, 0.2, 0.02, sample_every=5)
    assert list(trajectory.table['t'].round(12)) == [0.0, 0.1, 0.2]
    assert trajectory.norm_drift < 1e-10
    assert trajectory.energy_drift < 1e-8


def test_exact_flow_rejects_bad_horizon(small_lp, small_basis):
    basis = small_basis(N=2, n_max=2)
    H = froehlich_exact.assemble_froehlich(basis.params, basis)
    state = froehlich_exact.pekar_product_state(basis, small_lp.psi, np.zeros(2))
    with pytest.raises(ValueError):
        froehlich_exact.evolve_exact(state, H, 0.25, 0.1)


def test_observer_columns_are_recorded(small_lp, small_basis):
    basis = small_basis(N=2, n_max=2)
    H = froehlich_exact.assemble_froehlich(basis.params, basis)
    state = froehlich_exact.pekar_product_state(basis, small_lp.psi, np.zeros(2))
    trajectory = froehlich_exact.evolve_exact(state, H, 0.1, 0.05, observer=lambda t, s: {'twice_t': 2 * t})
    assert_allclose(trajectory.table['twice_t'], 2 * trajectory.table['t'])


def test_trace_norm():
    assert_allclose(froehlich_exact.trace_norm(np.diag([1.0, -2.0, 0.5])), 3.5)


def test_state_shape_is_checked(small_basis):
    basis = small_basis(N=2, n_max=2)
    with pytest.raises(ValueError):
        froehlich_exact.ManyBodyState(basis, np.zeros(basis.dim + 1))


@pytest.fixture
def two_sites():
    # sites x = 0, 1/2 on the unit circle and the single phonon mode k = -1
    grid = lattice.build_grid(1, 1.0, 2)
    return grid, lattice.momentum_modes(grid)


def _random_state(basis, rng):
    coeffs = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return froehlich_exact.ManyBodyState(basis, coeffs / np.linalg.norm(coeffs))


def test_one_particle_hamiltonian_matches_dense_matrix(two_sites):
    grid, modes = two_sites
    params = froehlich_exact.FroehlichParams(N=1, alpha=0.7, grid=grid, modes=modes, n_max=1)
    basis = froehlich_exact.ManyBodyBasis(params)
    assert basis.dim == 4
    assert basis.phonon.states.ravel().tolist() == [0, 1]
    sites = basis.particle_states.argmax(axis=1)
    hopping = 2 * np.pi ** 2 * np.array([[1.0, -1.0], [-1.0, 1.0]])
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    density = np.diag(np.array([1.0, -1.0])[sites])
    coupling = np.sqrt(0.7) * np.kron(density, a)
    expected = (np.kron(hopping[np.ix_(sites, sites)], np.eye(2)) + np.kron(np.eye(2), np.diag([0.0, 1.0]))
                + coupling + coupling.T)
    H = froehlich_exact.assemble_froehlich(params, basis)
    assert_allclose(H.matrix.toarray(), expected, atol=1e-12)


def test_reduced_density_matches_partial_trace(small_basis, rng):
    basis = small_basis(N=2, n_max=2)
    state = _random_state(basis, rng)
    sites = basis.sites
    # symmetric two-particle wave function Psi(x1, x2, phonons)
    psi = np.zeros((sites, sites, basis.phonon.dim), dtype=complex)
    for row, occupation in zip(state.matrix(), basis.particle_states):
        occupied = np.flatnonzero(occupation)
        if len(occupied) == 1:
            x = occupied[0]
            psi[x, x] = row
        else:
            x, y = occupied
            psi[x, y] = psi[y, x] = row / np.sqrt(2)
    assert_allclose(np.sum(np.abs(psi) ** 2), 1.0)
    expected = np.einsum('xzp,yzp->xy', psi, psi.conj())
    gamma = froehlich_exact.reduced_density_particle(state)
    assert_allclose(gamma, expected, atol=1e-12)
    # functional a as a sum of singular values
    uniform = landau_pekar.uniform_psi(basis.params.grid)
    c = lattice.to_coords(uniform, basis.params.grid)
    q = np.eye(sites) - np.outer(c, c.conj())
    S = froehlich_exact.sobolev_weight(basis.params.grid)
    singular = np.linalg.svd(S @ q @ expected @ q @ S, compute_uv=False)
    assert_allclose(froehlich_exact.functional_a(state, uniform), singular.sum(), rtol=1e-10)


def test_reduced_density_is_a_density_matrix(small_basis, rng):
    state = _random_state(small_basis(N=3, n_max=2), rng)
    gamma = froehlich_exact.reduced_density_particle(state)
    assert_allclose(gamma, gamma.conj().T)
    assert np.linalg.eigvalsh(gamma).min() > -1e-12
    assert_allclose(np.trace(gamma).real, 1.0, atol=1e-12)


def test_displaced_one_phonon_state_has_b_equal_one_over_N(small_lp, small_basis):
    N = 3
    basis = small_basis(N=N, n_max=6)
    particle = froehlich_exact.pekar_product_state(basis, small_lp.psi, np.zeros(2)).matrix()[:, 0]
    grid = small_lp.grid
    f = np.sqrt(N) * grid.L ** (-grid.d / 2) * small_lp.phi
    phonon = fock.weyl_matrix(basis.phonon, f) @ fock.basis_vector(basis.phonon, (1, 0))
    state = froehlich_exact.ManyBodyState(basis, np.outer(particle, phonon).reshape(-1))
    assert_allclose(froehlich_exact.functional_b(state, small_lp.phi), 1.0 / N, rtol=1e-10)


def test_two_site_trace_distances(two_sites):
    grid, _ = two_sites
    psi = landau_pekar.uniform_psi(grid)
    # particle sitting on x = 0 against the uniform condensate, overlap 1/2
    gamma = np.diag([1.0, 0.0]).astype(complex)
    assert_allclose(froehlich_exact.trace_distance(gamma, psi, grid), np.sqrt(2.0), rtol=1e-12)
    expected = np.sqrt(4 * np.pi ** 4 + 8 * np.pi ** 2 + 2)
    assert_allclose(froehlich_exact.sobolev_trace_distance(gamma, psi, grid), expected, rtol=1e-12)


def test_decoupled_plane_wave_is_stationary():
    grid = lattice.build_grid(1, 4.0, 4)
    modes = lattice.momentum_modes(grid, uv_cutoff=0.25)
    params = froehlich_exact.FroehlichParams(N=2, alpha=0.0, grid=grid, modes=modes, n_max=2)
    basis = froehlich_exact.ManyBodyBasis(params)
    H = froehlich_exact.assemble_froehlich(params, basis)
    initial = froehlich_exact.pekar_product_state(basis, landau_pekar.plane_wave_psi(grid, 1), np.zeros(2))
    trajectory = froehlich_exact.evolve_exact(initial, H, 0.5, 0.05)
    final = trajectory.states[-1].coeffs
    assert_allclose(abs(np.vdot(initial.coeffs, final)), 1.0, atol=1e-10)
    energy = 2 * (2 * np.pi / grid.L) ** 2
    assert_allclose(final, np.exp(-0.5j * energy) * initial.coeffs, atol=1e-9)
