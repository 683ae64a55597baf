# Fluctuation dynamics on the double Fock space G = F_b (x) F_a
# - b modes are the n^d plane waves of the particle, a modes the phonon mode set
# - H^B(t) = dGamma(h) + N_a + sqrt(alpha) sum K(m,p) (a*_m + a_{-m}) b*_p + h.c.
# - H(t)   = same with b*_p dressed by [1 - N_b/N]_+^{1/2}, plus the cubic term
#            sqrt(alpha/N) sum_m g_m (dGamma(q e_m q) - conj(sigma_m) N_b) a_m + h.c.
# - time stepping with frozen generators (midpoint, order 2) or a commutator-free
#   Magnus scheme with two Gauss nodes (order 4)

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp
from tqdm import tqdm

import fock
import lattice
from froehlich_exact import kinetic_matrix
from landau_pekar import gauge_phase, phonon_potential, step_count

logger = logging.getLogger(__name__)

# Constants
integrators = ('midpoint', 'cfm4')
cfm4_nodes = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)
cfm4_weights = ((3 - 2 * math.sqrt(3)) / 12, (3 + 2 * math.sqrt(3)) / 12)
normalization_tolerance = 1e-8
orthogonality_tolerance = 1e-7
admissibility_warning = 1e3
sector_report = 4
chi_presets = ('vacuum', 'single-excitation', 'custom-file')
trajectory_columns = (['t', 'norm', 'N_a', 'N_b', 'T_b', 'orthogonality_defect']
                      + [f'sector_{k}' for k in range(sector_report + 1)]
                      + ['leakage', 'N_moment_2', 'N_moment_3'])


class KernelError(ValueError):
    pass


class TrajectoryMismatchError(ValueError):
    pass


@dataclass
class DoubleFockState:
    basis: fock.DoubleFockBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.basis.dim,):
            raise fock.FockError(f"coefficient vector of length {self.coeffs.shape} does not match {self.basis!r}")

    def norm(self):
        return float(np.linalg.norm(self.coeffs))

    def product(self):
        return self.basis.to_product(self.coeffs)


@dataclass(frozen=True, eq=False)
class FluctuationKernels:
    # site coordinates
    q_kernel: np.ndarray       # 1 - |psi><psi|
    K_matrix: np.ndarray       # K(m, x) = g_m (q e^{-2 pi i k_m .} psi)(x)
    h_matrix: np.ndarray       # -Lap + sqrt(alpha) Phi - mu
    # plane-wave coordinates, as used by the b modes
    psi_modes: np.ndarray
    pair_matrix: np.ndarray    # K(m, p)
    h_modes: np.ndarray
    cubic_matrices: np.ndarray # q e_m q, shape (modes, D, D)
    sigma: np.ndarray          # <psi, e^{-2 pi i k_m .} psi>
    coupling: np.ndarray       # g_m
    neg: np.ndarray
    alpha: float


def build_kernels(psi, phi, grid, modes, alpha):
    c = lattice.to_coords(psi, grid)
    norm = np.linalg.norm(c)
    if abs(norm - 1.0) > normalization_tolerance:
        raise KernelError(f"condensate wave function has norm {norm:.12f}")
    P = lattice.plane_wave_unitary(grid)
    Pd = P.conj().T

    q = np.eye(grid.size) - np.outer(c, c.conj())
    ebar = np.exp(-2j * np.pi * grid.points @ modes.k.T)          # (sites, modes)
    sigma = (np.abs(c) ** 2) @ ebar
    K_matrix = modes.coupling[:, None] * (q @ (ebar * c[:, None])).T

    Phi = phonon_potential(phi, grid, modes).reshape(-1)
    mu = gauge_phase(psi, phi, alpha, grid, modes)
    h = kinetic_matrix(grid) + np.diag(np.sqrt(alpha) * Phi - mu)

    q_modes = Pd @ q @ P
    shifts = np.einsum('xp,xm,xr->mpr', P.conj(), ebar.conj(), P)   # P^dag diag(e_m) P
    cubic = q_modes[None, :, :] @ shifts @ q_modes[None, :, :]

    return FluctuationKernels(
        q_kernel=q, K_matrix=K_matrix, h_matrix=h,
        psi_modes=Pd @ c, pair_matrix=K_matrix @ P.conj(), h_modes=Pd @ h @ P,
        cubic_matrices=cubic, sigma=sigma, coupling=modes.coupling, neg=modes.neg, alpha=float(alpha),
    )


def kernels_from_state(state):
    return build_kernels(state.psi, state.phi, state.grid, state.modes, state.alpha)


def fluctuation_basis(grid, modes, b_cutoff, a_cutoff, total_cutoff=None):
    return fock.DoubleFockBasis(grid.size, len(modes), b_cutoff, a_cutoff, total_cutoff)


def bogoliubov_basis(grid, modes, M):
    # every side bounded by the total excitation cutoff M
    return fock.DoubleFockBasis(grid.size, len(modes), M, M, total_cutoff=M)


class FluctuationGenerator:
    """H^B(t) (N=None) or H(t) on a DoubleFockBasis, as a fixed sparse template.

    The operator terms are lifted once; each time step only recombines them with
    coefficients taken from the kernels.
    """

    def __init__(self, basis, N=None):
        self.basis = basis
        self.N = N
        b, a = basis.b, basis.a
        D, K = b.mode_count, a.mode_count
        template = fock.OperatorTemplate(basis.dim)

        for p in range(D):
            for q in range(D):
                template.add(('hop', p, q), basis.lift(fock.hopping_operator(b, p, q)))
        template.add(('N_a',), basis.lift(None, fock.number_operator(a).matrix))

        if N is None:
            dressing = sp.identity(b.dim, format='csr')
        else:
            dressing = sp.diags(np.sqrt(np.clip(1.0 - b.totals / N, 0.0, None))).tocsr()
        for m in range(K):
            for p in range(D):
                create = (b.creator(p) @ dressing).tocsr()
                destroy = create.conj().T.tocsr()
                template.add(('pair+', m, p), basis.lift(create, a.creator(m)))
                template.add(('pair+', m, p, 'h.c.'), basis.lift(destroy, a.annihilator(m)))
                template.add(('pair-', m, p), basis.lift(create, a.annihilator(m)))
                template.add(('pair-', m, p, 'h.c.'), basis.lift(destroy, a.creator(m)))

        if N is not None:
            n_b = fock.number_operator(b).matrix
            for m in range(K):
                template.add(('depletion', m), basis.lift(n_b, a.annihilator(m)))
                template.add(('depletion', m, 'h.c.'), basis.lift(n_b, a.creator(m)))
            for m in range(K):
                for p in range(D):
                    for q in range(D):
                        template.add(('cubic', m, p, q), basis.lift(fock.hopping_operator(b, p, q), a.annihilator(m)))
                        template.add(('cubic', m, p, q, 'h.c.'), basis.lift(fock.hopping_operator(b, q, p), a.creator(m)))
        self.template = template
        logger.debug("fluctuation generator on %r with %d terms (N=%s)", basis, len(template.keys), N)

    def coefficients(self, kernels):
        D = self.basis.b.mode_count
        if kernels.h_modes.shape != (D, D) or kernels.pair_matrix.shape[0] != self.basis.a.mode_count:
            raise TrajectoryMismatchError("kernels do not match the double Fock basis")
        root = np.sqrt(kernels.alpha)
        pair = root * kernels.pair_matrix
        pair_minus = pair[kernels.neg]
        blocks = [
            kernels.h_modes.reshape(-1),
            np.ones(1),
            np.stack([pair, pair.conj(), pair_minus, pair_minus.conj()], axis=-1).reshape(-1),
        ]
        if self.N is not None:
            scale = np.sqrt(kernels.alpha / self.N) * kernels.coupling
            depletion = -scale * kernels.sigma.conj()
            blocks.append(np.stack([depletion, depletion.conj()], axis=-1).reshape(-1))
            cubic = scale[:, None, None] * kernels.cubic_matrices
            blocks.append(np.stack([cubic, cubic.conj()], axis=-1).reshape(-1))
        return np.concatenate(blocks).astype(complex)

    def assemble(self, coefficients):
        return fock.SparseOperator(self.template.assemble(coefficients))

    def __call__(self, kernels):
        return self.assemble(self.coefficients(kernels))


def assemble_HB(kernels, basis):
    operator = FluctuationGenerator(basis)(kernels)
    operator.check_hermitian(1e-12)
    return operator


def assemble_H_full(kernels, basis, N):
    if N < 1:
        raise ValueError(f"particle number must be >= 1, got N={N}")
    operator = FluctuationGenerator(basis, N)(kernels)
    operator.check_hermitian(1e-12)
    return operator


def pair_creation_part(kernels, basis):
    """sqrt(alpha) sum K(m,p) a*_m b*_p, the part of H^B raising the excitation number by two."""
    b, a = basis.b, basis.a
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for m in range(a.mode_count):
        for p in range(b.mode_count):
            coefficient = np.sqrt(kernels.alpha) * kernels.pair_matrix[m, p]
            if coefficient != 0:
                out = out + coefficient * basis.lift(b.creator(p), a.creator(m))
    return out


def _apply_b(matrix, chi):
    # one-body b operators never raise the total above the starting value
    X = chi.basis.to_product(chi.coeffs)
    return chi.basis.from_product(matrix @ X)


def orthogonality_defect(chi, psi, grid):
    """||(1 - Gamma(q)) chi|| where Gamma(q) = q^{(x)j} on the sector with j particle excitations.

    Gamma(q) projects onto zero occupation of the condensate mode, which is the
    normal-ordered exponential sum_j (-1)^j / j! (b*_psi)^j (b_psi)^j.
    """
    basis = chi.basis
    c = lattice.plane_wave_unitary(grid).conj().T @ lattice.to_coords(psi, grid)
    lower = sp.csr_matrix((basis.b.dim, basis.b.dim), dtype=complex)
    for p, cp in enumerate(c):
        if cp != 0:
            lower = lower + np.conj(cp) * basis.b.annihilator(p)
    raise_ = lower.conj().T.tocsr()

    X = basis.to_product(chi.coeffs)
    projected = X.copy()
    lowered = X
    for j in range(1, basis.b.n_max + 1):
        lowered = lower @ lowered
        if not np.any(lowered):
            break
        term = lowered
        for _ in range(j):
            term = raise_ @ term
        projected = projected + (-1) ** j / math.factorial(j) * term
    return float(np.linalg.norm(basis.from_product(X - projected)))


def sector_norms(chi, kmax=sector_report):
    n_b = chi.basis.n_b
    return np.array([np.linalg.norm(chi.coeffs[n_b == k]) for k in range(kmax + 1)])


def leakage(chi, M):
    return float(np.linalg.norm(chi.coeffs[chi.basis.n_total > M]))


def number_moments(chi, orders=(1, 2, 3)):
    weights = np.abs(chi.coeffs) ** 2
    total = chi.basis.n_total.astype(float)
    norm2 = max(float(np.sum(weights)), 1e-300)
    return {j: float(np.sum(weights * total ** j) / norm2) for j in orders}


def kinetic_weights(grid):
    # lambda_p for the plane-wave b modes
    return lattice.particle_momenta(grid)


def admissibility(chi, grid):
    """||(N_a^3 + N_b^3 + T_b)^{1/2} chi||, a diagnostic for the initial data."""
    basis = chi.basis
    T_b = basis.b.states @ kinetic_weights(grid)
    weights = basis.n_a ** 3 + basis.n_b ** 3 + T_b[basis.ib]
    value = float(np.sqrt(np.sum(weights * np.abs(chi.coeffs) ** 2)))
    if value > admissibility_warning:
        logger.warning("initial fluctuation vector has a large moment bound %.3g", value)
    return value


def observables(chi, psi, grid, M=None):
    basis = chi.basis
    weights = np.abs(chi.coeffs) ** 2
    norm2 = max(float(np.sum(weights)), 1e-300)
    T_b = (basis.b.states @ kinetic_weights(grid))[basis.ib]
    moments = number_moments(chi)
    row = {
        'norm': float(np.sqrt(np.sum(weights))),
        'N_a': float(np.sum(weights * basis.n_a) / norm2),
        'N_b': float(np.sum(weights * basis.n_b) / norm2),
        'T_b': float(np.sum(weights * T_b) / norm2),
        'orthogonality_defect': orthogonality_defect(chi, psi, grid),
    }
    for k, value in enumerate(sector_norms(chi)):
        row[f'sector_{k}'] = float(value)
    row['leakage'] = leakage(chi, M) if M is not None else 0.0
    row['N_moment_2'] = moments[2]
    row['N_moment_3'] = moments[3]
    return row


@dataclass
class FluctuationTrajectory:
    states: list
    table: pd.DataFrame

    @property
    def norm_drift(self):
        n = self.table['norm']
        return float(np.max(np.abs(n - n.iloc[0])))

    @property
    def max_orthogonality_defect(self):
        return float(self.table['orthogonality_defect'].max())


def _check_path(path, basis, dt):
    initial = path.checkpoints[0]
    if initial.grid.size != basis.b.mode_count or len(initial.modes) != basis.a.mode_count:
        raise TrajectoryMismatchError(f"mean-field path on {initial.grid.size} sites / {len(initial.modes)} modes "
                                      f"does not fit {basis!r}")
    ratio = dt / path.dt
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise TrajectoryMismatchError(f"step dt={dt} is not a multiple of the mean-field path step {path.dt}")


def _propagate(chi, generator, path, T, dt, scheme, tol, sample_every, M, observer, progress, label):
    if scheme not in integrators:
        raise ValueError(f"unknown integrator {scheme!r}, expected one of {integrators}")
    basis = chi.basis
    _check_path(path, basis, dt)
    n_steps = step_count(T, dt)
    mask = None
    if M is not None and np.any(basis.n_total > M):
        mask = sp.diags((basis.n_total <= M).astype(float)).tocsr()

    def generator_at(t):
        return generator.coefficients(kernels_from_state(path.at(t)))

    def propagate(coefficients, coeffs):
        H = generator.template.assemble(coefficients)
        if mask is not None:
            H = mask @ H @ mask
        return fock.krylov_expm(H, coeffs, dt, tol)

    def sample(t, coeffs):
        state = DoubleFockState(basis, coeffs)
        mean_field = path.at(t)
        row = {'t': t}
        row.update(observables(state, mean_field.psi, mean_field.grid, M))
        if observer is not None:
            row.update(observer(t, state, mean_field))
        return row, state

    row, state = sample(0.0, chi.coeffs)
    rows, states = [row], [state]
    coeffs = chi.coeffs
    logger.info("%s evolve: %r T=%g dt=%g scheme=%s", label, basis, T, dt, scheme)
    for step in tqdm(range(n_steps), disable=not progress, desc=label):
        t = step * dt
        if scheme == 'midpoint':
            coeffs = propagate(generator_at(t + dt / 2), coeffs)
        else:
            c1, c2 = (generator_at(t + node * dt) for node in cfm4_nodes)
            w1, w2 = cfm4_weights
            coeffs = propagate(w2 * c1 + w1 * c2, coeffs)
            coeffs = propagate(w1 * c1 + w2 * c2, coeffs)
        if (step + 1) % sample_every == 0 or step + 1 == n_steps:
            row, state = sample((step + 1) * dt, coeffs)
            rows.append(row)
            states.append(state)

    trajectory = FluctuationTrajectory(states=states, table=pd.DataFrame(rows))
    logger.info("%s evolve done: norm drift %.2e, max orthogonality defect %.2e",
                label, trajectory.norm_drift, trajectory.max_orthogonality_defect)
    if trajectory.max_orthogonality_defect > orthogonality_tolerance:
        logger.warning("%s: orthogonality defect %.2e above %.0e", label,
                       trajectory.max_orthogonality_defect, orthogonality_tolerance)
    return trajectory


def evolve_bogoliubov(chi, path, T, dt, M=None, scheme='midpoint', tol=1e-12, sample_every=1,
                      observer=None, progress=False):
    """Truncated Bogoliubov flow i d/dt chi = 1(N <= M) H^B(t) 1(N <= M) chi.

    The initial vector is projected onto N <= M. When the basis holds states
    above M they are kept as an (always empty) margin, so leakage is observable.
    """
    basis = chi.basis
    if M is None:
        if basis.total_cutoff is None:
            raise ValueError("excitation cutoff M is required for a basis without total cutoff")
        M = basis.total_cutoff
    coeffs = np.where(basis.n_total <= M, chi.coeffs, 0.0)
    generator = FluctuationGenerator(basis)
    return _propagate(DoubleFockState(basis, coeffs), generator, path, T, dt, scheme, tol, sample_every,
                      M, observer, progress, 'bogoliubov')


def evolve_fluctuation(chi, path, T, dt, N, scheme='midpoint', tol=1e-12, sample_every=1,
                       observer=None, progress=False):
    basis = chi.basis
    above = np.linalg.norm(chi.coeffs[basis.n_b > N])
    if above > 0:
        raise fock.FockError(f"fluctuation vector has weight {above:.3e} with more than N={N} particle excitations")
    generator = FluctuationGenerator(basis, N)
    return _propagate(chi, generator, path, T, dt, scheme, tol, sample_every,
                      None, observer, progress, 'fluctuation')


def refinement_distance(chi, reference):
    """||chi - chi_ref|| after copying chi into the reference basis."""
    moved, dropped = chi.basis.transfer(chi.coeffs, reference.basis)
    if dropped > 0:
        logger.warning("refinement: %.3e of the coarse vector does not fit the reference basis", dropped)
    return float(np.linalg.norm(moved - reference.coeffs))


def vacuum(basis):
    return DoubleFockState(basis, basis.vacuum())


def single_excitation(basis, psi, grid):
    """b*(xi) Omega with xi = q e_p for the lowest nonzero plane wave p, normalized."""
    c = lattice.plane_wave_unitary(grid).conj().T @ lattice.to_coords(psi, grid)
    lam = lattice.particle_momenta(grid)
    best = None
    for p in np.argsort(lam, kind='stable'):
        if lam[p] == 0:
            continue
        xi = -c * np.conj(c[p])
        xi[p] += 1.0
        if np.linalg.norm(xi) > 1e-6:
            best = xi / np.linalg.norm(xi)
            break
    if best is None:
        raise KernelError("no plane wave with a component orthogonal to the condensate")
    X = np.zeros((basis.b.dim, basis.a.dim), dtype=complex)
    for p, value in enumerate(best):
        occupation = [0] * basis.b.mode_count
        occupation[p] = 1
        X[basis.b.index[tuple(occupation)], 0] = value
    return DoubleFockState(basis, basis.from_product(X))


def load_chi(path, basis):
    with np.load(path) as data:
        coeffs = data['chi'].astype(complex)
    if coeffs.shape != (basis.dim,):
        raise fock.FockError(f"{path}: vector of length {coeffs.size}, basis has dimension {basis.dim}")
    return DoubleFockState(basis, coeffs)


def make_chi(preset, basis, psi, grid, path=None):
    if preset == 'vacuum':
        return vacuum(basis)
    if preset == 'single-excitation':
        return single_excitation(basis, psi, grid)
    if preset == 'custom-file':
        return load_chi(path, basis)
    raise ValueError(f"unknown fluctuation preset {preset!r}, expected one of {chi_presets}")
