# Torus discretization shared by every solver in the lab
# - grid of n^d sites on [0, L)^d, site ordering row-major over dimensions
# - phonon momentum modes k_m = m/L without the zero mode, form factor |k|^-1
# - transform pair realizing  int dx e^{-2 pi i k x}  and its inverse
# - Sobolev norms of grid functions and weighted norms of mode amplitudes

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# Constants
supported_dimensions = (1, 3)
max_norm_order = 3


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TorusGrid:
    d: int
    L: float
    n: int
    h: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, 'h', self.L / self.n)

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def size(self):
        return self.n ** self.d

    @property
    def weight(self):
        # quadrature weight for  int dx
        return self.h ** self.d

    @property
    def points(self):
        axis = np.arange(self.n) * self.h
        mesh = np.meshgrid(*([axis] * self.d), indexing='ij')
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def integer_momenta(self):
        # fft ordering: 0, 1, ..., n/2-1, -n/2, ..., -1 along each axis
        axis = np.fft.fftfreq(self.n, d=1.0 / self.n).astype(int)
        mesh = np.meshgrid(*([axis] * self.d), indexing='ij')
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class ModeSet:
    grid: TorusGrid
    m: np.ndarray          # integer mode labels, shape (K, d)
    k: np.ndarray          # momenta m / L
    v: np.ndarray          # form factor |k|^-1
    lam: np.ndarray        # Laplacian eigenvalues (2 pi |k|)^2
    flat: np.ndarray       # position of each mode in the flattened fft array
    neg: np.ndarray        # index of the mode -m (mod n) inside this set

    @property
    def weight(self):
        # measure weight for  int dk
        return self.grid.L ** (-self.grid.d)

    @property
    def coupling(self):
        # Kronecker-normalized coupling g_m = L^{-d/2} v_m
        return self.grid.L ** (-self.grid.d / 2) * self.v

    def __len__(self):
        return len(self.v)


def build_grid(d, L, n):
    if d not in supported_dimensions:
        raise GridError(f"unsupported dimension d={d}, expected one of {supported_dimensions}")
    if L <= 0:
        raise GridError(f"side length must be positive, got L={L}")
    if n < 2 or n % 2 != 0:
        raise GridError(f"points per dimension must be even and >= 2, got n={n}")
    return TorusGrid(d=int(d), L=float(L), n=int(n))


def momentum_modes(grid, uv_cutoff=None):
    m_all = grid.integer_momenta()
    flat_all = np.arange(grid.size)
    k_all = m_all / grid.L
    k_abs = np.linalg.norm(k_all, axis=1)

    keep = k_abs > 0
    if uv_cutoff is not None:
        keep &= k_abs <= uv_cutoff + 1e-12

    m = m_all[keep]
    k = k_all[keep]
    flat = flat_all[keep]
    v = 1.0 / k_abs[keep]
    lam = (2 * np.pi * k_abs[keep]) ** 2

    # m -> -m on the lattice; Nyquist components fold onto themselves
    position = {tuple(row % grid.n): i for i, row in enumerate(m)}
    neg = np.array([position[tuple((-row) % grid.n)] for row in m], dtype=int)

    logger.debug("mode set: %d modes (uv_cutoff=%s)", len(v), uv_cutoff)
    return ModeSet(grid=grid, m=m, k=k, v=v, lam=lam, flat=flat, neg=neg)


def particle_momenta(grid):
    """Laplacian eigenvalues of all n^d plane waves, fft (flattened) ordering, zero mode included."""
    k = grid.integer_momenta() / grid.L
    return (2 * np.pi) ** 2 * np.sum(k ** 2, axis=1)


def _check_field(f, grid):
    f = np.asarray(f)
    if f.size != grid.size:
        raise GridError(f"field has {f.size} values but the grid has {grid.size} sites")
    return f.reshape(grid.shape)


def full_transform(f, grid):
    # h^d sum_x e^{-2 pi i k x} f(x) over all n^d momenta, flattened fft ordering
    f = _check_field(f, grid)
    return grid.weight * np.fft.fftn(f).reshape(-1)


def transform(f, grid, modes):
    return full_transform(f, grid)[modes.flat]


def inverse_transform(c, grid, modes, zero_mode=0.0):
    c = np.asarray(c)
    if c.shape != (len(modes),):
        raise GridError(f"expected {len(modes)} mode amplitudes, got shape {c.shape}")
    full = np.zeros(grid.size, dtype=complex)
    full[modes.flat] = c
    full[0] = zero_mode
    # w sum_m c_m e^{2 pi i k x}, with w = L^-d
    return grid.L ** (-grid.d) * grid.size * np.fft.ifftn(full.reshape(grid.shape))


def inverse_full_transform(c_full, grid):
    c_full = np.asarray(c_full).reshape(grid.shape)
    return grid.L ** (-grid.d) * grid.size * np.fft.ifftn(c_full)


def to_coords(f, grid):
    # grid function -> orthonormal site coordinates
    return np.sqrt(grid.weight) * _check_field(f, grid).reshape(-1)


def from_coords(c, grid):
    return (np.asarray(c) / np.sqrt(grid.weight)).reshape(grid.shape)


def plane_wave_unitary(grid):
    """Columns are the normalized plane waves in site coordinates: P[x, p] = n^{-d/2} e^{2 pi i k_p x}."""
    phase = 2j * np.pi * grid.points @ (grid.integer_momenta() / grid.L).T
    return np.exp(phase) / np.sqrt(grid.size)


def _check_order(m):
    if int(m) != m or not 0 <= m <= max_norm_order:
        raise GridError(f"norm order must be an integer in 0..{max_norm_order}, got {m}")
    return int(m)


def sobolev_norm(f, grid, m):
    m = _check_order(m)
    f_hat = full_transform(f, grid)
    lam = particle_momenta(grid)
    total = grid.L ** (-grid.d) * np.sum((1 + lam) ** m * np.abs(f_hat) ** 2)
    return float(np.sqrt(total))


def weighted_norm(c, modes, m):
    m = _check_order(m)
    k2 = np.sum(modes.k ** 2, axis=1)
    total = modes.weight * np.sum((1 + k2) ** m * np.abs(np.asarray(c)) ** 2)
    return float(np.sqrt(total))


def negate_index(modes):
    """Index of -m for every mode m; Nyquist components are their own image."""
    return modes.neg
