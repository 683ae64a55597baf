import numpy as np
import pytest
from numpy.testing import assert_allclose

import bogoliubov
import excitation
import froehlich_exact
import lattice


def _random_state(basis, rng):
    coeffs = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return froehlich_exact.ManyBodyState(basis, coeffs / np.linalg.norm(coeffs))


def test_condensate_frame_is_unitary(small_lp):
    c = small_lp.coords()
    V = excitation.condensate_frame(c)
    assert_allclose(V.conj().T @ V, np.eye(c.size), atol=1e-12)
    assert_allclose(V[:, 0], c)


def test_excitation_basis_matches_many_body_basis(small_basis):
    basis = small_basis(N=3, n_max=4)
    target = excitation.excitation_basis(basis)
    assert target.b.mode_count == basis.sites
    assert target.b.n_max == 3
    assert target.a.dim == basis.phonon.dim


def test_product_state_maps_to_vacuum(small_lp, small_basis):
    basis = small_basis(N=3, n_max=4)
    state = froehlich_exact.pekar_product_state(basis, small_lp.psi, small_lp.phi)
    chi = excitation.excitation_map(state, small_lp.psi, small_lp.phi)
    assert_allclose(chi.coeffs, chi.basis.vacuum(), atol=1e-9)


def test_vacuum_maps_back_to_product_state(small_lp, small_basis):
    basis = small_basis(N=2, n_max=4)
    vacuum = bogoliubov.vacuum(excitation.excitation_basis(basis))
    state = excitation.inverse_excitation(vacuum, small_lp.psi, small_lp.phi, basis)
    assert excitation.pekar_product_distance(state, small_lp.psi, small_lp.phi) < 1e-9


@pytest.mark.parametrize('N', [1, 2, 3])
def test_round_trip_and_isometry(small_lp, small_basis, rng, N):
    basis = small_basis(N=N, n_max=4)
    for _ in range(3):
        state = _random_state(basis, rng)
        chi = excitation.excitation_map(state, small_lp.psi, small_lp.phi)
        assert_allclose(chi.norm(), 1.0, atol=1e-10)
        assert np.all(chi.basis.n_b <= N)
        back = excitation.inverse_excitation(chi, small_lp.psi, small_lp.phi, basis)
        assert excitation.norm_distance(back, state) < 1e-9


def test_excitations_are_orthogonal_to_condensate(small_lp, small_basis, rng):
    basis = small_basis(N=2, n_max=3)
    chi = excitation.excitation_map(_random_state(basis, rng), small_lp.psi, small_lp.phi)
    assert bogoliubov.orthogonality_defect(chi, small_lp.psi, small_lp.grid) < 1e-10


def test_inverse_rejects_too_many_excitations(small_lp, small_basis):
    basis = small_basis(N=1, n_max=2)
    wide = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 2)
    coeffs = np.zeros(wide.dim, dtype=complex)
    coeffs[np.flatnonzero((wide.n_b == 2) & (wide.n_a == 0))[0]] = 1.0
    with pytest.raises(excitation.SectorSupportError):
        excitation.inverse_excitation(bogoliubov.DoubleFockState(wide, coeffs), small_lp.psi, small_lp.phi, basis)


def test_corrected_state_checks_orthogonality(small_lp, small_basis):
    basis = small_basis(N=2, n_max=3)
    wide = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 2)
    c = small_lp.coords()
    P = lattice.plane_wave_unitary(small_lp.grid)
    coeffs = np.zeros(wide.dim, dtype=complex)
    for p, value in enumerate(P.conj().T @ c):
        occupation = tuple(int(p == j) for j in range(wide.b.mode_count))
        coeffs[np.flatnonzero(wide.ib == wide.b.index[occupation])[0]] = value
    parallel = bogoliubov.DoubleFockState(wide, coeffs)
    with pytest.raises(excitation.DefectBreachError):
        excitation.build_psi_B(parallel, small_lp.psi, small_lp.phi, basis)


def test_corrected_state_discards_what_the_basis_cannot_hold(small_lp, small_basis):
    basis = small_basis(N=1, n_max=1)
    wide = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 2)
    two_phonons = np.zeros(wide.dim, dtype=complex)
    two_phonons[np.flatnonzero((wide.n_b == 0) & (wide.n_a == 2))[0]] = 1.0
    chi = bogoliubov.DoubleFockState(wide, 0.6 * wide.vacuum() + 0.8 * two_phonons)
    phi = np.zeros(len(small_lp.modes), dtype=complex)
    state, tail = excitation.build_psi_B(chi, small_lp.psi, phi, basis)
    assert_allclose(tail, 0.8)
    # no renormalization
    assert_allclose(state.norm(), 0.6, atol=1e-12)
    assert_allclose(excitation.pekar_product_distance(state, small_lp.psi, phi), 0.4, atol=1e-12)


def test_vacuum_gives_the_product_state(small_lp, small_basis):
    basis = small_basis(N=3, n_max=4)
    wide = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 4)
    state, tail = excitation.build_psi_B(bogoliubov.vacuum(wide), small_lp.psi, small_lp.phi, basis)
    assert tail == 0.0
    assert excitation.pekar_product_distance(state, small_lp.psi, small_lp.phi) < 1e-9


def test_distance_needs_a_shared_basis(small_lp, small_basis):
    phi = np.zeros(len(small_lp.modes), dtype=complex)
    first = froehlich_exact.pekar_product_state(small_basis(N=2, n_max=2), small_lp.psi, phi)
    second = froehlich_exact.pekar_product_state(small_basis(N=2, n_max=2), small_lp.psi, phi)
    with pytest.raises(ValueError):
        excitation.norm_distance(first, second)


@pytest.mark.parametrize('N', [1, 2])
def test_one_excitation_sector(small_lp, small_basis, N):
    basis = small_basis(N=N, n_max=2)
    grid = small_lp.grid
    phi = np.zeros(len(small_lp.modes), dtype=complex)
    chi = bogoliubov.single_excitation(excitation.excitation_basis(basis), small_lp.psi, grid)
    one_particle = [chi.basis.b.index[tuple(row)] for row in np.eye(chi.basis.b.mode_count, dtype=int)]
    xi = lattice.plane_wave_unitary(grid) @ chi.product()[one_particle, 0]
    c = small_lp.coords()
    # psi^{(x)(N-1)} (x)_s xi in site occupations, phonons in the vacuum
    expected = np.zeros(basis.particle_dim, dtype=complex)
    for row, occupation in enumerate(basis.particle_states):
        occupied = np.flatnonzero(occupation)
        if N == 1:
            expected[row] = xi[occupied[0]]
        elif len(occupied) == 1:
            x = occupied[0]
            expected[row] = np.sqrt(2) * c[x] * xi[x]
        else:
            x, y = occupied
            expected[row] = c[x] * xi[y] + xi[x] * c[y]
    state = excitation.inverse_excitation(chi, small_lp.psi, phi, basis)
    assert_allclose(state.matrix()[:, 0], expected, atol=1e-12)
    assert_allclose(state.matrix()[:, 1:], 0.0, atol=1e-12)
    assert_allclose(state.norm(), 1.0, atol=1e-12)


def test_orthonormal_states_stay_root_two_apart(small_lp, small_basis):
    basis = small_basis(N=2, n_max=2)
    first = froehlich_exact.ManyBodyState(basis, np.eye(basis.dim)[0])
    second = froehlich_exact.ManyBodyState(basis, np.eye(basis.dim)[7])
    assert_allclose(excitation.norm_distance(first, second), np.sqrt(2))
    chi_first = excitation.excitation_map(first, small_lp.psi, small_lp.phi)
    chi_second = excitation.excitation_map(second, small_lp.psi, small_lp.phi)
    assert_allclose(np.linalg.norm(chi_first.coeffs - chi_second.coeffs), np.sqrt(2), atol=1e-10)


def test_norm_distance_is_a_metric(small_basis, rng):
    basis = small_basis(N=2, n_max=2)
    a, b, c = (_random_state(basis, rng) for _ in range(3))
    assert excitation.norm_distance(a, a) == 0.0
    assert excitation.norm_distance(a, b) == excitation.norm_distance(b, a)
    assert excitation.norm_distance(a, c) <= excitation.norm_distance(a, b) + excitation.norm_distance(b, c)
