# Excitation map U_N = (condensate peeling) (x) W*(sqrt(N) phi) between the N-particle
# Froehlich space and the double Fock space with at most N particle excitations,
# its inverse, and the Bogoliubov-corrected many-body state Psi^B

import logging
from math import comb

import numpy as np

import fock
import lattice
from bogoliubov import DoubleFockState, orthogonality_defect
from froehlich_exact import ManyBodyState, pekar_product_state

logger = logging.getLogger(__name__)

# Constants
defect_tolerance = 1e-6
support_tolerance = 1e-12


class SectorSupportError(ValueError):
    pass


class DefectBreachError(ValueError):
    pass


def condensate_frame(c):
    """Unitary V (site coordinates) whose first column is the condensate vector c."""
    D = c.size
    Q, _ = np.linalg.qr(np.column_stack([c, np.eye(D, dtype=complex)]))
    V = Q[:, :D].copy()
    # Q[:, 0] is c up to a phase
    V[:, 0] = c
    return V


def excitation_basis(basis):
    """Double Fock basis matching a many-body basis: b modes = plane waves, at most N excitations."""
    return fock.DoubleFockBasis(basis.sites, basis.phonon.mode_count, basis.N, basis.phonon.n_max)


def _frame(basis, psi):
    grid = basis.params.grid
    c = lattice.to_coords(psi, grid)
    if abs(np.linalg.norm(c) - 1.0) > 1e-8:
        raise ValueError(f"condensate wave function has norm {np.linalg.norm(c):.12f}")
    return condensate_frame(c), lattice.plane_wave_unitary(grid)


def _coherent_shift(basis, phi):
    grid = basis.params.grid
    return np.sqrt(basis.N) * grid.L ** (-grid.d / 2) * np.asarray(phi)


def _peel_positions(basis, target):
    # particle occupations (n_0, rest) in the condensate frame -> excitation states (0, rest)
    return np.array([target.b.index[(0,) + tuple(s[1:])] for s in basis.particle_states], dtype=int)


def excitation_map(state, psi, phi):
    """chi = U_N Psi, sector k holding the part with N - k particles in the condensate."""
    basis = state.basis
    target = excitation_basis(basis)
    V, P = _frame(basis, psi)

    # phonons: W*(sqrt(N) phi) = W(-sqrt(N) f)
    C = state.matrix() @ fock.weyl_matrix(basis.phonon, -_coherent_shift(basis, phi)).T
    # particles: rewrite in the condensate frame, then drop the condensate occupation
    C = basis.lift_particle_rotation(V.conj().T) @ C
    X = np.zeros((target.b.dim, target.a.dim), dtype=complex)
    X[_peel_positions(basis, target)] = C
    # excitation modes to plane-wave coordinates
    X = fock.second_quantize(P.conj().T @ V, target.b) @ X
    return DoubleFockState(target, target.from_product(X))


def inverse_excitation(chi, psi, phi, basis):
    """Psi = W(sqrt(N) phi) sum_k psi^{(x)(N-k)} (x)_s chi^(k).

    Components of chi along psi itself are folded into the condensate, so the
    map is the exact inverse of excitation_map on vectors orthogonal to psi.
    """
    target = excitation_basis(basis)
    coeffs, dropped = chi.basis.transfer(chi.coeffs, target)
    if dropped > support_tolerance:
        raise SectorSupportError(f"fluctuation vector has weight {dropped:.3e} outside N_b <= {basis.N} "
                                 f"or the phonon cutoff {basis.phonon.n_max}")
    V, P = _frame(basis, psi)
    N = basis.N

    X = fock.second_quantize(V.conj().T @ P, target.b) @ target.to_product(coeffs)
    C = np.zeros((basis.particle_dim, basis.phonon.dim), dtype=complex)
    for row, occupation in enumerate(target.b.states):
        k = int(occupation.sum())
        n0 = int(occupation[0])
        # (b*_psi)^{N-k} / sqrt((N-k)!) on top of n0 condensate quanta
        position = basis.particle_index[(n0 + N - k,) + tuple(occupation[1:])]
        C[position] += np.sqrt(comb(n0 + N - k, n0)) * X[row]
    C = basis.lift_particle_rotation(V) @ C
    C = C @ fock.weyl_matrix(basis.phonon, _coherent_shift(basis, phi)).T
    return ManyBodyState.from_matrix(basis, C)


def build_psi_B(chi_B, psi, phi, basis, defect_tol=defect_tolerance):
    """Bogoliubov-corrected many-body state; returns (Psi^B, discarded tail).

    Sectors with more than N particle excitations (and phonon states beyond the
    many-body cutoff) are discarded; the result is not renormalized.
    """
    grid = basis.params.grid
    defect = orthogonality_defect(chi_B, psi, grid)
    if defect > defect_tol:
        raise DefectBreachError(f"fluctuation vector is not orthogonal to the condensate (defect {defect:.3e})")
    target = excitation_basis(basis)
    coeffs, tail = chi_B.basis.transfer(chi_B.coeffs, target)
    if tail > 0:
        logger.debug("Psi^B: discarded tail %.3e", tail)
    state = inverse_excitation(DoubleFockState(target, coeffs), psi, phi, basis)
    return state, tail


def norm_distance(first, second):
    if first.basis is not second.basis:
        raise ValueError("states live in different many-body bases")
    return float(np.linalg.norm(first.coeffs - second.coeffs))


def pekar_product_distance(state, psi, phi):
    """Distance to the uncorrected product psi^{(x)N} (x) W(sqrt(N) phi) Omega."""
    return norm_distance(state, pekar_product_state(state.basis, psi, phi))
