# Truncated bosonic Fock spaces
# - occupation bases with a total-number cutoff, lexicographic ordering
# - creation / annihilation / number / hopping operators as scipy sparse matrices
# - Weyl displacement and coherent states through a Lanczos propagator
# - Fock lift of one-body matrices and the two-species (b, a) product basis

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from math import comb, factorial

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal, expm
from scipy.stats import poisson

logger = logging.getLogger(__name__)

# Constants
krylov_max_dim = 40
krylov_max_splits = 8
tail_tolerance = 1e-8
breakdown_tolerance = 1e-14


class FockError(ValueError):
    pass


class KrylovConvergenceError(RuntimeError):
    pass


class TruncationWarning(UserWarning):
    pass


def _occupations(mode_count, total):
    # all tuples with sum <= total in lexicographic order
    if mode_count == 0:
        yield ()
        return
    for first in range(total + 1):
        for rest in _occupations(mode_count - 1, total - first):
            yield (first,) + rest


class OccupationBasis:
    def __init__(self, mode_count, n_max):
        if mode_count < 0 or n_max < 0:
            raise FockError(f"invalid basis size: mode_count={mode_count}, n_max={n_max}")
        self.mode_count = int(mode_count)
        self.n_max = int(n_max)
        states = list(_occupations(self.mode_count, self.n_max))
        self.states = np.array(states, dtype=int).reshape(len(states), self.mode_count)
        self.index = {s: i for i, s in enumerate(states)}
        self.totals = self.states.sum(axis=1)
        assert len(states) == comb(self.n_max + self.mode_count, self.mode_count)
        self._annihilators = {}

    @property
    def dim(self):
        return len(self.states)

    def __repr__(self):
        return f"OccupationBasis(mode_count={self.mode_count}, n_max={self.n_max}, dim={self.dim})"

    def sector(self, total):
        return np.flatnonzero(self.totals == total)

    def vacuum(self):
        return FockVector(self, basis_vector(self, (0,) * self.mode_count))

    def embed_into(self, other):
        """Position of every state of this basis inside `other` (-1 where the state is missing)."""
        if other.mode_count != self.mode_count:
            raise FockError("bases have different mode counts")
        return np.array([other.index.get(tuple(s), -1) for s in self.states], dtype=int)

    def annihilator(self, m):
        if not 0 <= m < self.mode_count:
            raise FockError(f"mode index {m} out of range for {self.mode_count} modes")
        if m not in self._annihilators:
            rows, cols, vals = [], [], []
            for col, state in enumerate(self.states):
                if state[m] > 0:
                    lowered = state.copy()
                    lowered[m] -= 1
                    rows.append(self.index[tuple(lowered)])
                    cols.append(col)
                    vals.append(np.sqrt(state[m]))
            self._annihilators[m] = sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))
        return self._annihilators[m]

    def creator(self, m):
        # adjoint of the annihilator: the top sector is mapped to zero
        return self.annihilator(m).T.tocsr()


@dataclass
class FockVector:
    basis: OccupationBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.basis.dim,):
            raise FockError(f"coefficient vector of length {self.coeffs.shape} does not match basis dim {self.basis.dim}")

    def norm(self):
        return float(np.linalg.norm(self.coeffs))

    def top_sector_weight(self):
        return float(np.sum(np.abs(self.coeffs[self.basis.totals == self.basis.n_max]) ** 2))


@dataclass
class SparseOperator:
    matrix: sp.csr_matrix
    hermitian: bool = True

    @property
    def dimension(self):
        return self.matrix.shape[0]

    def __matmul__(self, v):
        return self.matrix @ v

    def hermiticity_defect(self):
        diff = self.matrix - self.matrix.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def check_hermitian(self, tol=1e-12):
        defect = self.hermiticity_defect()
        if defect > tol:
            raise FockError(f"operator flagged hermitian has defect {defect:.3e}")
        return defect


def basis_vector(basis, occupation):
    v = np.zeros(basis.dim, dtype=complex)
    v[basis.index[tuple(occupation)]] = 1.0
    return v


def apply_annihilate(m, v):
    return FockVector(v.basis, v.basis.annihilator(m) @ v.coeffs)


def apply_create(m, v):
    return FockVector(v.basis, v.basis.creator(m) @ v.coeffs)


def number_operator(basis, weights=None):
    if weights is None:
        weights = np.ones(basis.mode_count)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (basis.mode_count,):
        raise FockError(f"expected {basis.mode_count} weights, got {weights.shape}")
    return SparseOperator(sp.diags(basis.states @ weights).tocsr())


def hopping_operator(basis, p, q):
    # b*_p b_q
    return (basis.creator(p) @ basis.annihilator(q)).tocsr()


def field_creator(basis, f):
    # a*(f) = sum_m f_m a*_m
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for m, fm in enumerate(np.asarray(f)):
        if fm != 0:
            out = out + fm * basis.creator(m)
    return out


def weyl_generator(basis, f):
    # W(f) = exp(-i G) with G = i (a*(f) - a(f)) Hermitian
    up = field_creator(basis, f)
    return SparseOperator((1j * (up - up.conj().T)).tocsr())


def coherent_tail_mass(f, n_max):
    """Weight of the coherent state W(f) beyond total occupation n_max (Poisson tail)."""
    mean = float(np.sum(np.abs(np.asarray(f)) ** 2))
    return float(poisson.sf(n_max, mean))


def _check_tail(f, basis, tol):
    tail = coherent_tail_mass(f, basis.n_max)
    if tail > tol:
        message = f"coherent weight beyond n_max={basis.n_max} is {tail:.2e} (> {tol:.0e})"
        logger.warning(message)
        warnings.warn(message, TruncationWarning, stacklevel=3)
    return tail


def weyl_displace(f, v, tol=1e-12, tail_tol=tail_tolerance):
    _check_tail(f, v.basis, tail_tol)
    if not np.any(np.asarray(f)):
        return FockVector(v.basis, v.coeffs.copy())
    generator = weyl_generator(v.basis, f)
    return FockVector(v.basis, krylov_expm(generator, v.coeffs, 1.0, tol))


def weyl_matrix(basis, f, tail_tol=tail_tolerance):
    """Dense W(f) on the truncated space, for applying one displacement to many vectors."""
    _check_tail(f, basis, tail_tol)
    if not np.any(np.asarray(f)):
        return np.eye(basis.dim, dtype=complex)
    return expm(-1j * weyl_generator(basis, f).matrix.toarray())


def coherent_state(f, basis, tol=1e-12, tail_tol=tail_tolerance):
    return weyl_displace(f, basis.vacuum(), tol=tol, tail_tol=tail_tol)


def coherent_amplitudes(alpha, n_max):
    # closed form e^{-|alpha|^2/2} alpha^n / sqrt(n!)
    n = np.arange(n_max + 1)
    return np.exp(-abs(alpha) ** 2 / 2) * np.array([alpha ** k / np.sqrt(float(factorial(k))) for k in n])


def _lanczos_step(matvec, v, dt, tol, max_dim):
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return np.zeros_like(v), True, 0
    V = np.zeros((v.size, max_dim + 1), dtype=complex)
    alpha = np.zeros(max_dim)
    beta = np.zeros(max_dim)
    V[:, 0] = v / beta0
    for j in range(max_dim):
        w = matvec(V[:, j])
        alpha[j] = np.vdot(V[:, j], w).real
        w = w - alpha[j] * V[:, j]
        if j > 0:
            w = w - beta[j - 1] * V[:, j - 1]
        # full reorthogonalization keeps the small subspaces well conditioned
        w = w - V[:, :j + 1] @ (V[:, :j + 1].conj().T @ w)
        beta[j] = np.linalg.norm(w)

        size = j + 1
        if size == 1:
            theta, S = np.array([alpha[0]]), np.ones((1, 1))
        else:
            theta, S = eigh_tridiagonal(alpha[:size], beta[:size - 1])
        y = S @ (np.exp(-1j * dt * theta) * S[0, :].conj())

        if beta[j] < breakdown_tolerance * max(1.0, abs(alpha[j])):
            return beta0 * (V[:, :size] @ y), True, size
        # a posteriori estimate of the truncation error
        if beta[j] * abs(y[-1]) <= tol:
            return beta0 * (V[:, :size] @ y), True, size
        V[:, j + 1] = w / beta[j]
    return beta0 * (V[:, :max_dim] @ y), False, max_dim


def krylov_expm(H, v, dt, tol=1e-12, max_dim=krylov_max_dim):
    """Approximate exp(-i H dt) v by Lanczos with adaptive subspace size.

    When the subspace limit is reached the step is split in halves, up to
    `krylov_max_splits` times, before giving up.
    """
    matrix = H.matrix if isinstance(H, SparseOperator) else H
    v = np.asarray(v, dtype=complex)
    if matrix.shape[0] != v.size:
        raise FockError(f"operator of dimension {matrix.shape[0]} applied to vector of length {v.size}")
    matvec = lambda x: matrix @ x

    for split in range(krylov_max_splits + 1):
        pieces = 2 ** split
        result = v
        converged = True
        for _ in range(pieces):
            result, ok, size = _lanczos_step(matvec, result, dt / pieces, tol / pieces, max_dim)
            if not ok:
                converged = False
                break
        if converged:
            logger.debug("krylov step: dt=%g split=%d last subspace=%d", dt, pieces, size)
            return result
    raise KrylovConvergenceError(f"Lanczos did not converge to tol={tol:g} within {max_dim} vectors "
                                 f"and {2 ** krylov_max_splits} substeps")


def second_quantize(A, basis, subset=None):
    """Fock lift Gamma(A) of a one-body matrix A, as a sparse matrix on `basis`.

    Gamma(A)|n> = prod_i (b*(A e_i))^{n_i} / sqrt(n_i!) |0>, which is number
    conserving, so the truncation never cuts anything. With `subset` (state
    indices closed under Gamma, e.g. one particle-number sector) only that
    block is returned.
    """
    A = np.asarray(A, dtype=complex)
    if A.shape != (basis.mode_count, basis.mode_count):
        raise FockError(f"one-body matrix of shape {A.shape} for {basis.mode_count} modes")
    lifted_creators = []
    for i in range(basis.mode_count):
        op = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
        for j in np.flatnonzero(np.abs(A[:, i]) > 0):
            op = op + A[j, i] * basis.creator(j)
        lifted_creators.append(op.tocsr())

    subset = np.arange(basis.dim) if subset is None else np.asarray(subset, dtype=int)
    columns = []
    vacuum = basis_vector(basis, (0,) * basis.mode_count)
    for state in basis.states[subset]:
        col = vacuum
        for i, occ in enumerate(state):
            for _ in range(occ):
                col = lifted_creators[i] @ col
        norm = np.sqrt(float(np.prod([factorial(int(k)) for k in state])))
        columns.append(sp.csc_matrix((col[subset] / norm).reshape(-1, 1)))
    return sp.hstack(columns).tocsr()


class OperatorTemplate:
    """Fixed set of sparse terms combined with coefficients that change every time step."""

    def __init__(self, dim):
        self.dim = dim
        self.keys = []
        self._rows, self._cols, self._vals, self._ids = [], [], [], []

    def add(self, key, matrix):
        coo = sp.coo_matrix(matrix)
        self._rows.append(coo.row)
        self._cols.append(coo.col)
        self._vals.append(coo.data.astype(complex))
        self._ids.append(np.full(coo.nnz, len(self.keys), dtype=int))
        self.keys.append(key)

    @cached_property
    def _stacked(self):
        return (np.concatenate(self._rows), np.concatenate(self._cols),
                np.concatenate(self._vals), np.concatenate(self._ids))

    def assemble(self, coefficients):
        coefficients = np.asarray(coefficients, dtype=complex)
        if coefficients.shape != (len(self.keys),):
            raise FockError(f"template has {len(self.keys)} terms, got {coefficients.shape} coefficients")
        rows, cols, vals, ids = self._stacked
        data = vals * coefficients[ids]
        return sp.csr_matrix((data, (rows, cols)), shape=(self.dim, self.dim))


class DoubleFockBasis:
    """Product basis of particle excitations (b) and phonons (a).

    Keeps pairs (n_b, n_a) with |n_b| <= b_cutoff, |n_a| <= a_cutoff and,
    when given, |n_b| + |n_a| <= total_cutoff.
    """

    def __init__(self, b_modes, a_modes, b_cutoff, a_cutoff, total_cutoff=None):
        self.b = OccupationBasis(b_modes, b_cutoff)
        self.a = OccupationBasis(a_modes, a_cutoff)
        self.total_cutoff = total_cutoff
        ib, ia = np.meshgrid(np.arange(self.b.dim), np.arange(self.a.dim), indexing='ij')
        ib, ia = ib.reshape(-1), ia.reshape(-1)
        keep = np.ones(ib.size, dtype=bool)
        if total_cutoff is not None:
            keep = self.b.totals[ib] + self.a.totals[ia] <= total_cutoff
        self.ib, self.ia = ib[keep], ia[keep]
        self.flat = self.ib * self.a.dim + self.ia
        self.n_b = self.b.totals[self.ib]
        self.n_a = self.a.totals[self.ia]

    @property
    def dim(self):
        return self.flat.size

    @property
    def n_total(self):
        return self.n_b + self.n_a

    def __repr__(self):
        return (f"DoubleFockBasis(b={self.b.mode_count}x{self.b.n_max}, a={self.a.mode_count}x{self.a.n_max}, "
                f"total_cutoff={self.total_cutoff}, dim={self.dim})")

    def lift(self, op_b=None, op_a=None):
        op_b = sp.identity(self.b.dim, format='csr') if op_b is None else op_b
        op_a = sp.identity(self.a.dim, format='csr') if op_a is None else op_a
        full = sp.kron(op_b, op_a, format='csr')
        return full[self.flat][:, self.flat].tocsr()

    def to_product(self, coeffs):
        out = np.zeros(self.b.dim * self.a.dim, dtype=complex)
        out[self.flat] = coeffs
        return out.reshape(self.b.dim, self.a.dim)

    def from_product(self, array):
        return np.asarray(array).reshape(-1)[self.flat]

    def vacuum(self):
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def transfer(self, coeffs, other):
        """Copy coefficients into `other` (same mode counts); returns (coeffs, norm of the dropped part)."""
        if other.b.mode_count != self.b.mode_count or other.a.mode_count != self.a.mode_count:
            raise FockError(f"cannot transfer between {self!r} and {other!r}")
        coeffs = np.asarray(coeffs)
        b_map, a_map = self.b.embed_into(other.b), self.a.embed_into(other.a)
        position = {(ib, ia): i for i, (ib, ia) in enumerate(zip(other.ib, other.ia))}
        out = np.zeros(other.dim, dtype=complex)
        dropped = 0.0
        for value, ib, ia in zip(coeffs, self.ib, self.ia):
            j = position.get((b_map[ib], a_map[ia]))
            if j is None:
                dropped += abs(value) ** 2
            else:
                out[j] = value
        return out, float(np.sqrt(dropped))
