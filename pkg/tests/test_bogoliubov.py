from math import comb

import numpy as np
import pytest
from numpy.testing import assert_allclose

import bogoliubov
import fock
import landau_pekar
import lattice


@pytest.fixture
def kernels(small_lp):
    return bogoliubov.kernels_from_state(small_lp)


def _condensate_excitation(basis, psi, grid):
    # b*(psi) Omega, entirely parallel to the condensate
    c = lattice.plane_wave_unitary(grid).conj().T @ lattice.to_coords(psi, grid)
    X = np.zeros((basis.b.dim, basis.a.dim), dtype=complex)
    for p, value in enumerate(c):
        occupation = [0] * basis.b.mode_count
        occupation[p] = 1
        X[basis.b.index[tuple(occupation)], 0] = value
    return bogoliubov.DoubleFockState(basis, basis.from_product(X))


def test_kernels_reject_unnormalized_condensate(small_lp):
    with pytest.raises(bogoliubov.KernelError):
        bogoliubov.build_kernels(2 * small_lp.psi, small_lp.phi, small_lp.grid, small_lp.modes, small_lp.alpha)


def test_pair_kernel_is_orthogonal_to_condensate(small_lp, kernels):
    c = small_lp.coords()
    assert_allclose(kernels.K_matrix @ c.conj(), 0.0, atol=1e-12)
    assert_allclose(kernels.pair_matrix @ kernels.psi_modes.conj(), 0.0, atol=1e-12)
    assert_allclose(kernels.h_matrix, kernels.h_matrix.conj().T, atol=1e-12)
    assert_allclose(kernels.h_modes, kernels.h_modes.conj().T, atol=1e-12)
    assert_allclose(kernels.q_kernel @ kernels.q_kernel, kernels.q_kernel, atol=1e-12)


def test_one_body_operator_expectation(small_lp, kernels):
    # <psi, (-Lap + sqrt(alpha) Phi - mu) psi> = kinetic + 2 mu - mu
    c = small_lp.coords()
    value = np.vdot(c, kernels.h_matrix @ c).real
    kinetic = landau_pekar.kinetic_energy(small_lp.psi, small_lp.grid)
    mu = landau_pekar.gauge_phase(small_lp.psi, small_lp.phi, small_lp.alpha, small_lp.grid, small_lp.modes)
    assert_allclose(value, kinetic + mu, rtol=1e-10)


@pytest.mark.parametrize('M', [1, 2, 3])
def test_bogoliubov_basis_dimension(small_lp, M):
    basis = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, M)
    assert basis.dim == comb(M + 6, 6)
    assert basis.n_total.max() == M


def test_generator_on_vacuum_creates_pairs(small_lp, kernels):
    basis = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 2)
    H = bogoliubov.assemble_HB(kernels, basis)
    pair = bogoliubov.pair_creation_part(kernels, basis)
    omega = basis.vacuum()
    out = H @ omega
    assert_allclose(out, pair @ omega, atol=1e-13)
    assert np.all(out[(basis.n_b != 1) | (basis.n_a != 1)] == 0)
    expected = np.sqrt(kernels.alpha * np.sum(np.abs(kernels.pair_matrix) ** 2))
    assert_allclose(np.linalg.norm(out), expected, rtol=1e-12)


def test_full_generator_is_hermitian(small_lp, kernels):
    basis = bogoliubov.fluctuation_basis(small_lp.grid, small_lp.modes, 2, 2)
    H = bogoliubov.assemble_H_full(kernels, basis, N=3)
    assert H.hermiticity_defect() < 1e-12
    with pytest.raises(ValueError):
        bogoliubov.assemble_H_full(kernels, basis, N=0)


def test_dressing_shrinks_with_particle_number(small_lp, kernels):
    basis = bogoliubov.fluctuation_basis(small_lp.grid, small_lp.modes, 2, 2, total_cutoff=3)
    HB = bogoliubov.assemble_HB(kernels, basis)
    v = bogoliubov.single_excitation(basis, small_lp.psi, small_lp.grid).coeffs
    gaps = [np.linalg.norm((bogoliubov.assemble_H_full(kernels, basis, N) @ v) - (HB @ v)) for N in (2, 4, 8, 16)]
    assert gaps[0] > 0
    assert all(later <= earlier for earlier, later in zip(gaps, gaps[1:]))


def test_generator_rejects_foreign_kernels(small_lp, kernels):
    grid = lattice.build_grid(1, 4.0, 8)
    basis = bogoliubov.bogoliubov_basis(grid, lattice.momentum_modes(grid, 0.25), 1)
    with pytest.raises(bogoliubov.TrajectoryMismatchError):
        bogoliubov.FluctuationGenerator(basis)(kernels)


def test_orthogonality_defect(small_lp):
    basis = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 2)
    vacuum = bogoliubov.vacuum(basis)
    excited = bogoliubov.single_excitation(basis, small_lp.psi, small_lp.grid)
    parallel = _condensate_excitation(basis, small_lp.psi, small_lp.grid)
    assert bogoliubov.orthogonality_defect(vacuum, small_lp.psi, small_lp.grid) == 0.0
    assert bogoliubov.orthogonality_defect(excited, small_lp.psi, small_lp.grid) < 1e-12
    assert_allclose(bogoliubov.orthogonality_defect(parallel, small_lp.psi, small_lp.grid), 1.0, rtol=1e-12)


def test_sector_norms_and_moments(small_lp):
    basis = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 2)
    excited = bogoliubov.single_excitation(basis, small_lp.psi, small_lp.grid)
    assert_allclose(bogoliubov.sector_norms(excited), [0, 1, 0, 0, 0], atol=1e-12)
    assert bogoliubov.number_moments(bogoliubov.vacuum(basis)) == {1: 0.0, 2: 0.0, 3: 0.0}
    assert_allclose(list(bogoliubov.number_moments(excited).values()), [1.0, 1.0, 1.0])
    assert bogoliubov.leakage(excited, 0) == pytest.approx(1.0)
    assert bogoliubov.leakage(excited, 1) == 0.0


def test_admissibility_of_single_excitation(small_lp):
    basis = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 2)
    excited = bogoliubov.single_excitation(basis, small_lp.psi, small_lp.grid)
    X = excited.product()
    one_particle = [basis.b.index[tuple(row)] for row in np.eye(basis.b.mode_count, dtype=int)]
    amplitudes = X[one_particle, 0]
    lam = lattice.particle_momenta(small_lp.grid)
    expected = np.sqrt(np.sum(np.abs(amplitudes) ** 2 * (1 + lam)))
    assert_allclose(bogoliubov.admissibility(excited, small_lp.grid), expected)


def test_truncated_flow_never_leaks(small_lp):
    M = 2
    path = landau_pekar.MeanFieldPath(small_lp, 0.05, substeps=2)
    basis = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, M + 2)
    chi0 = bogoliubov.single_excitation(basis, small_lp.psi, small_lp.grid)
    trajectory = bogoliubov.evolve_bogoliubov(chi0, path, 0.1, 0.05, M)
    assert list(trajectory.table.columns[:len(bogoliubov.trajectory_columns)]) == bogoliubov.trajectory_columns
    assert len(trajectory.table) == 3
    assert trajectory.table['leakage'].max() == 0.0
    assert trajectory.norm_drift < 1e-10


def test_flow_stays_orthogonal_to_condensate(small_lp):
    path = landau_pekar.MeanFieldPath(small_lp, 0.01, substeps=4)
    basis = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 2)
    chi0 = bogoliubov.single_excitation(basis, small_lp.psi, small_lp.grid)
    trajectory = bogoliubov.evolve_bogoliubov(chi0, path, 0.1, 0.01, scheme='cfm4', sample_every=5)
    assert trajectory.max_orthogonality_defect < 1e-4
    assert trajectory.table['N_a'].iloc[-1] > 0


def test_large_particle_number_approaches_bogoliubov_flow(small_lp):
    path = landau_pekar.MeanFieldPath(small_lp, 0.05)
    basis = bogoliubov.fluctuation_basis(small_lp.grid, small_lp.modes, 2, 2, total_cutoff=2)
    chi0 = bogoliubov.single_excitation(basis, small_lp.psi, small_lp.grid)
    bog = bogoliubov.evolve_bogoliubov(chi0, path, 0.1, 0.05)
    full = bogoliubov.evolve_fluctuation(chi0, path, 0.1, 0.05, N=10 ** 6)
    assert np.linalg.norm(bog.states[-1].coeffs - full.states[-1].coeffs) < 1e-2


def test_fluctuation_flow_needs_at_most_N_excitations(small_lp):
    path = landau_pekar.MeanFieldPath(small_lp, 0.05)
    basis = bogoliubov.fluctuation_basis(small_lp.grid, small_lp.modes, 3, 1)
    coeffs = np.zeros(basis.dim, dtype=complex)
    coeffs[np.flatnonzero(basis.n_b == 3)[0]] = 1.0
    with pytest.raises(fock.FockError):
        bogoliubov.evolve_fluctuation(bogoliubov.DoubleFockState(basis, coeffs), path, 0.1, 0.05, N=2)


def test_step_must_fit_the_mean_field_path(small_lp):
    path = landau_pekar.MeanFieldPath(small_lp, 0.02)
    basis = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 1)
    chi0 = bogoliubov.vacuum(basis)
    with pytest.raises(bogoliubov.TrajectoryMismatchError):
        bogoliubov.evolve_bogoliubov(chi0, path, 0.06, 0.03)
    with pytest.raises(ValueError):
        bogoliubov.evolve_bogoliubov(chi0, path, 0.04, 0.02, scheme='euler')


def test_cutoff_is_required_without_total_cutoff(small_lp):
    path = landau_pekar.MeanFieldPath(small_lp, 0.05)
    basis = bogoliubov.fluctuation_basis(small_lp.grid, small_lp.modes, 1, 1)
    with pytest.raises(ValueError):
        bogoliubov.evolve_bogoliubov(bogoliubov.vacuum(basis), path, 0.1, 0.05)


def test_refinement_distance_of_embedded_state(small_lp):
    coarse = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 2)
    fine = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 3)
    chi = bogoliubov.single_excitation(coarse, small_lp.psi, small_lp.grid)
    moved, _ = coarse.transfer(chi.coeffs, fine)
    reference = bogoliubov.DoubleFockState(fine, moved)
    assert bogoliubov.refinement_distance(chi, reference) == 0.0


def test_chi_presets(tmp_path, small_lp):
    basis = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 1)
    excited = bogoliubov.make_chi('single-excitation', basis, small_lp.psi, small_lp.grid)
    target = tmp_path / 'chi.npz'
    np.savez(target, chi=excited.coeffs)
    loaded = bogoliubov.make_chi('custom-file', basis, small_lp.psi, small_lp.grid, target)
    assert_allclose(loaded.coeffs, excited.coeffs)
    np.savez(target, chi=np.ones(3))
    with pytest.raises(fock.FockError):
        bogoliubov.load_chi(target, basis)
    with pytest.raises(ValueError):
        bogoliubov.make_chi('thermal', basis, small_lp.psi, small_lp.grid)


def test_number_commutator_picks_out_pair_terms(small_lp, kernels):
    # i [N_b + N_a, H^B] = 2i (P - P*) with P the pair creation part
    basis = bogoliubov.bogoliubov_basis(small_lp.grid, small_lp.modes, 3)
    H = bogoliubov.assemble_HB(kernels, basis).matrix.toarray()
    number = np.diag(basis.n_total.astype(float))
    pair = bogoliubov.pair_creation_part(kernels, basis).toarray()
    assert_allclose(1j * (number @ H - H @ number), 2j * (pair - pair.conj().T), atol=1e-12)
    assert np.abs(pair).max() > 0


def test_dressing_blocks_creation_at_N(small_lp, kernels, rng):
    N = 2
    basis = bogoliubov.fluctuation_basis(small_lp.grid, small_lp.modes, N + 1, 1)
    H = bogoliubov.assemble_H_full(kernels, basis, N)
    v = (rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)) * (basis.n_b == N)
    out = H @ v
    assert np.linalg.norm(out[basis.n_b <= N]) > 0
    assert np.all(out[basis.n_b > N] == 0)
    # without the dressing the same vector does reach N + 1
    HB = bogoliubov.assemble_HB(kernels, basis)
    assert np.linalg.norm((HB @ v)[basis.n_b > N]) > 0


@pytest.mark.parametrize('N', [None, 1, 3])
def test_phonon_changing_terms_average_out(small_lp, kernels, N):
    basis = bogoliubov.fluctuation_basis(small_lp.grid, small_lp.modes, 2, 2)
    H = bogoliubov.assemble_HB(kernels, basis) if N is None else bogoliubov.assemble_H_full(kernels, basis, N)
    omega = basis.vacuum()
    assert abs(np.vdot(omega, H @ omega)) < 1e-14
    # on a state of fixed phonon number only dGamma(h) contributes
    chi = bogoliubov.single_excitation(basis, small_lp.psi, small_lp.grid)
    one_particle = [basis.b.index[tuple(row)] for row in np.eye(basis.b.mode_count, dtype=int)]
    xi = chi.product()[one_particle, 0]
    expected = np.vdot(xi, kernels.h_modes @ xi)
    assert_allclose(np.vdot(chi.coeffs, H @ chi.coeffs), expected, atol=1e-12)
