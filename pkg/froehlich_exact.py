# Many-body Froehlich model on the lattice
# - N bosons on the n^d sites (symmetric states as site occupations) times truncated phonon modes
# - H = sum_j (-Lap_j) + sqrt(alpha/N) sum_j sum_m g_m (e^{2 pi i k_m x_j} a_m + h.c.) + N_a
# - Krylov time stepping and the convergence observables: reduced density matrix,
#   condensate depletion a[Psi, psi], phonon fluctuation b[Psi, phi], trace distances

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.special import gammaln
from tqdm import tqdm

import fock
import lattice

logger = logging.getLogger(__name__)

# Constants
max_nonzeros = 5_000_000
bytes_per_nonzero = 16 + 4          # complex value + column index
exact_columns = ['t', 'norm', 'energy', 'a', 'b', 'trace_distance', 'sobolev_trace_distance']


class DimensionOverflowError(MemoryError):
    def __init__(self, nonzeros, limit):
        required = nonzeros * bytes_per_nonzero
        super().__init__(f"Hamiltonian needs about {nonzeros:,} nonzeros ({required / 2 ** 20:.1f} MiB), "
                         f"limit is {limit:,}")
        self.nonzeros = nonzeros
        self.required_bytes = required


@dataclass(frozen=True, eq=False)
class FroehlichParams:
    N: int
    alpha: float
    grid: lattice.TorusGrid
    modes: lattice.ModeSet
    n_max: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"particle number must be >= 1, got N={self.N}")
        if self.alpha < 0:
            raise ValueError(f"coupling must be >= 0, got alpha={self.alpha}")


class ManyBodyBasis:
    """Product of the N-particle sector over lattice sites and a truncated phonon basis.

    Combined index = particle_index * phonon.dim + phonon_index.
    """

    def __init__(self, params):
        self.params = params
        self.sites = params.grid.size
        self.particles = fock.OccupationBasis(self.sites, params.N)
        self.sector = self.particles.sector(params.N)
        self.particle_states = self.particles.states[self.sector]
        self.particle_index = {tuple(s): i for i, s in enumerate(self.particle_states)}
        self.phonon = fock.OccupationBasis(len(params.modes), params.n_max)

    @property
    def N(self):
        return self.params.N

    @property
    def particle_dim(self):
        return len(self.sector)

    @property
    def dim(self):
        return self.particle_dim * self.phonon.dim

    def __repr__(self):
        return f"ManyBodyBasis(N={self.N}, sites={self.sites}, particle_dim={self.particle_dim}, phonon_dim={self.phonon.dim})"

    def particle_operator(self, matrix):
        # restriction of an operator on the full particle basis to the N sector
        return matrix[self.sector][:, self.sector].tocsr()

    @cached_property
    def hoppings(self):
        # b*_y b_x restricted to the N sector, keyed by (y, x)
        return {(y, x): self.particle_operator(fock.hopping_operator(self.particles, y, x))
                for y in range(self.sites) for x in range(self.sites)}

    def lift_particle_rotation(self, U):
        """Gamma(U) on the N sector for a unitary one-body matrix in site coordinates."""
        return fock.second_quantize(U, self.particles, subset=self.sector)


@dataclass
class ManyBodyState:
    basis: ManyBodyBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.basis.dim,):
            raise ValueError(f"coefficient vector of length {self.coeffs.shape} does not match basis dim {self.basis.dim}")

    def norm(self):
        # Psi_N is not forced to unit norm
        return float(np.linalg.norm(self.coeffs))

    def matrix(self):
        return self.coeffs.reshape(self.basis.particle_dim, self.basis.phonon.dim)

    @classmethod
    def from_matrix(cls, basis, matrix):
        return cls(basis, np.asarray(matrix).reshape(-1))


def kinetic_matrix(grid):
    """-Lap in orthonormal site coordinates, realized with the plane-wave eigenvalues."""
    P = lattice.plane_wave_unitary(grid)
    return (P * lattice.particle_momenta(grid)) @ P.conj().T


def sobolev_weight(grid):
    # sqrt(1 - Lap) in site coordinates
    P = lattice.plane_wave_unitary(grid)
    return (P * np.sqrt(1.0 + lattice.particle_momenta(grid))) @ P.conj().T


def _estimate_nonzeros(kinetic, phonon_number, annihilators, particle_dim):
    coupling = sum(a.nnz for a in annihilators)
    return kinetic.nnz * phonon_number.shape[0] + particle_dim * phonon_number.shape[0] + 2 * particle_dim * coupling


def assemble_froehlich(params, basis=None, limit=max_nonzeros):
    basis = basis or ManyBodyBasis(params)
    grid, modes = params.grid, params.modes

    # particle side
    T = kinetic_matrix(grid)
    kinetic = sp.csr_matrix((basis.particle_dim, basis.particle_dim), dtype=complex)
    for (y, x), hop in basis.hoppings.items():
        if abs(T[y, x]) > 1e-14:
            kinetic = kinetic + T[y, x] * hop

    # phonon side
    phonon_number = fock.number_operator(basis.phonon).matrix
    annihilators = [basis.phonon.annihilator(m) for m in range(len(modes))]

    nonzeros = _estimate_nonzeros(kinetic, phonon_number, annihilators, basis.particle_dim)
    if nonzeros > limit:
        raise DimensionOverflowError(nonzeros, limit)

    I_p = sp.identity(basis.particle_dim, format='csr')
    I_a = sp.identity(basis.phonon.dim, format='csr')
    H = sp.kron(kinetic, I_a, format='csr') + sp.kron(I_p, phonon_number, format='csr')

    if params.alpha > 0:
        # sum_j e^{2 pi i k_m x_j} is diagonal in site occupations
        phases = np.exp(2j * np.pi * grid.points @ modes.k.T)          # (sites, modes)
        densities = basis.particle_states @ phases                      # (particle_dim, modes)
        scale = np.sqrt(params.alpha / params.N)
        interaction = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
        for m, a_m in enumerate(annihilators):
            term = sp.kron(sp.diags(densities[:, m]), a_m, format='csr')
            interaction = interaction + scale * modes.coupling[m] * term
        H = H + interaction + interaction.conj().T

    operator = fock.SparseOperator(H.tocsr())
    operator.check_hermitian(1e-12)
    logger.info("Froehlich Hamiltonian: %r, nnz=%d", basis, operator.matrix.nnz)
    return operator


def pekar_product_state(basis, psi, phi):
    """psi^{(x)N} (x) W(sqrt(N) f) Omega with f = L^{-d/2} phi."""
    grid = basis.params.grid
    c = lattice.to_coords(psi, grid)
    counts = basis.particle_states
    # multinomial weights sqrt(N! / prod n_x!)
    log_weight = 0.5 * (_log_factorial(basis.N) - np.sum(_log_factorial(counts), axis=1))
    particle = np.exp(log_weight).astype(complex)
    for x in range(basis.sites):
        occupied = counts[:, x] > 0
        particle[occupied] *= c[x] ** counts[occupied, x]
    f = np.sqrt(basis.N) * grid.L ** (-grid.d / 2) * np.asarray(phi)
    phonon = fock.coherent_state(f, basis.phonon).coeffs
    return ManyBodyState(basis, np.outer(particle, phonon).reshape(-1))


def _log_factorial(n):
    return gammaln(np.asarray(n, dtype=float) + 1.0)


def expectation(state, H):
    matrix = H.matrix if isinstance(H, fock.SparseOperator) else H
    return float(np.vdot(state.coeffs, matrix @ state.coeffs).real) / state.norm() ** 2


@dataclass
class ExactTrajectory:
    states: list
    table: pd.DataFrame

    @property
    def norm_drift(self):
        n = self.table['norm']
        return float(np.max(np.abs(n - n.iloc[0])))

    @property
    def energy_drift(self):
        e = self.table['energy']
        return float(np.max(np.abs(e - e.iloc[0])))


def evolve_exact(state, H, T, dt, tol=1e-12, sample_every=1, observer=None, progress=False):
    """Propagate i d/dt Psi = H Psi with Krylov steps.

    `observer(t, state)` may return extra columns for each sampled row.
    """
    if H.hermitian:
        H.check_hermitian(1e-10)
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"horizon T={T} is not a multiple of dt={dt}")

    def sample(t, current):
        row = {'t': t, 'norm': current.norm(), 'energy': expectation(current, H)}
        if observer is not None:
            row.update(observer(t, current))
        return row

    rows, states = [sample(0.0, state)], [state]
    coeffs = state.coeffs
    for step in tqdm(range(1, n_steps + 1), disable=not progress, desc='exact'):
        coeffs = fock.krylov_expm(H, coeffs, dt, tol)
        if step % sample_every == 0 or step == n_steps:
            current = ManyBodyState(state.basis, coeffs)
            rows.append(sample(step * dt, current))
            states.append(current)

    table = pd.DataFrame(rows)
    trajectory = ExactTrajectory(states=states, table=table)
    logger.info("exact evolve: %d steps, norm drift %.2e, energy drift %.2e",
                n_steps, trajectory.norm_drift, trajectory.energy_drift)
    return trajectory


def reduced_density_particle(state):
    """gamma[x, y] = <b*_y b_x> / (N ||Psi||^2) in orthonormal site coordinates."""
    norm2 = state.norm() ** 2
    if norm2 == 0:
        raise ValueError("reduced density of the zero state")
    basis = state.basis
    C = state.matrix()
    gamma = np.zeros((basis.sites, basis.sites), dtype=complex)
    for (y, x), hop in basis.hoppings.items():
        gamma[x, y] = np.vdot(C, hop @ C)
    gamma /= basis.N * norm2
    # symmetrize away rounding
    return 0.5 * (gamma + gamma.conj().T)


def trace_norm(A):
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (A + A.conj().T)))))


def _projector(psi, grid):
    c = lattice.to_coords(psi, grid)
    return np.outer(c, c.conj())


def functional_a(state, psi):
    grid = state.basis.params.grid
    gamma = reduced_density_particle(state)
    q = np.eye(grid.size) - _projector(psi, grid)
    S = sobolev_weight(grid)
    return trace_norm(S @ q @ gamma @ q @ S)


def functional_b(state, phi):
    basis = state.basis
    grid = basis.params.grid
    f = np.sqrt(basis.N) * grid.L ** (-grid.d / 2) * np.asarray(phi)
    W_inv = fock.weyl_matrix(basis.phonon, -f)
    C = state.matrix() @ W_inv.T
    occupation = basis.phonon.totals
    mean = float(np.sum(np.abs(C) ** 2 * occupation[None, :]))
    return mean / (basis.N * state.norm() ** 2)


def sobolev_trace_distance(gamma, psi, grid):
    S = sobolev_weight(grid)
    return trace_norm(S @ (gamma - _projector(psi, grid)) @ S)


def trace_distance(gamma, psi, grid):
    return trace_norm(gamma - _projector(psi, grid))


def convergence_observables(state, psi, phi):
    """a, b and both trace distances of Psi against the mean-field pair (psi, phi)."""
    grid = state.basis.params.grid
    gamma = reduced_density_particle(state)
    return {
        'a': functional_a(state, psi),
        'b': functional_b(state, phi),
        'trace_distance': trace_distance(gamma, psi, grid),
        'sobolev_trace_distance': sobolev_trace_distance(gamma, psi, grid),
    }
