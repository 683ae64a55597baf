# Landau-Pekar equations on the torus grid
#   i d/dt psi = (-Lap + sqrt(alpha) Phi_phi - mu) psi
#   i d/dt phi = phi + sqrt(alpha) |k|^-1 int dx e^{-2 pi i k x} |psi|^2
# solved with a Strang splitting (kinetic half step / exact local flow / kinetic half step)
# or fourth-order compositions of Strang steps,
# plus the energy functionals, the gauge phase and the growth diagnostics

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from tqdm import tqdm

import lattice

logger = logging.getLogger(__name__)

# Constants
psi_presets = ('gaussian', 'uniform', 'plane-wave')
phi_presets = ('zero', 'gaussian', 'coherent-file')
trajectory_columns = ['t', 'mass', 'energy', 'H1', 'H3', 'L2_1', 'L2_2', 'f', 'energy3']
# Strang step lengths, in units of dt, making up one step of each scheme
_yoshida = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_suzuki = 1.0 / (4.0 - 4.0 ** (1.0 / 3.0))
composition_weights = {
    'strang': (1.0,),
    'yoshida4': (_yoshida, 1.0 - 2.0 * _yoshida, _yoshida),
    'suzuki4': (_suzuki, _suzuki, 1.0 - 4.0 * _suzuki, _suzuki, _suzuki),
}
lp_schemes = tuple(composition_weights)


class BlowUpError(RuntimeError):
    def __init__(self, t, message):
        super().__init__(f"t={t:.6g}: {message}")
        self.t = t


class PositivityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LPState:
    psi: np.ndarray      # grid values, shape grid.shape
    phi: np.ndarray      # continuum amplitudes phi(k_m), one per mode
    t: float
    alpha: float
    grid: lattice.TorusGrid
    modes: lattice.ModeSet

    @property
    def coherent_amplitudes(self):
        # Kronecker-normalized amplitudes f_m = L^{-d/2} phi(k_m)
        return self.grid.L ** (-self.grid.d / 2) * self.phi

    def coords(self):
        return lattice.to_coords(self.psi, self.grid)


def phonon_potential(phi, grid, modes):
    phi = np.asarray(phi)
    if phi.shape != (len(modes),):
        raise lattice.GridError(f"phi has shape {phi.shape}, expected ({len(modes)},)")
    z = lattice.inverse_transform(modes.v * phi, grid, modes)
    # z + conj(z)
    return 2.0 * z.real


def gauge_phase(psi, phi, alpha, grid, modes):
    Phi = phonon_potential(phi, grid, modes)
    return 0.5 * np.sqrt(alpha) * grid.weight * float(np.sum(Phi * np.abs(psi) ** 2))


def kinetic_energy(psi, grid):
    psi_hat = lattice.full_transform(psi, grid)
    lam = lattice.particle_momenta(grid)
    return float(grid.L ** (-grid.d) * np.sum(lam * np.abs(psi_hat) ** 2))


def lp_energy(psi, phi, alpha, grid, modes):
    Phi = phonon_potential(phi, grid, modes)
    potential = np.sqrt(alpha) * grid.weight * np.sum(Phi * np.abs(psi) ** 2)
    field = modes.weight * np.sum(np.abs(phi) ** 2)
    return kinetic_energy(psi, grid) + float(potential) + float(field)


def mass(psi, grid):
    return float(grid.weight * np.sum(np.abs(psi) ** 2))


def _kinetic_phase(grid, dt):
    lam = lattice.particle_momenta(grid).reshape(grid.shape)
    return np.exp(-1j * lam * dt)


def lp_step(state, dt, gauge=True):
    """One Strang step of length dt > 0."""
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    return _strang(state, dt, gauge)


def lp_advance(state, dt, scheme='strang', gauge=True):
    """One step of length dt with the chosen splitting.

    The fourth-order schemes are symmetric compositions of Strang steps
    ('yoshida4' triple jump, 'suzuki4' five-stage fractal); their middle
    substep runs backwards in time.
    """
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if scheme not in composition_weights:
        raise ValueError(f"unknown splitting {scheme!r}, expected one of {lp_schemes}")
    start = state.t
    for weight in composition_weights[scheme]:
        state = _strang(state, weight * dt, gauge)
    return replace(state, t=start + dt)


def _strang(state, dt, gauge):
    # valid for either sign of dt
    grid, modes, alpha = state.grid, state.modes, state.alpha
    half_kick = _kinetic_phase(grid, dt / 2)

    # (i) kinetic half step in mode space
    psi = np.fft.ifftn(half_kick * np.fft.fftn(state.psi))

    # (ii) local part: |psi|^2 is frozen, so the phi equation is linear with a constant source
    rho = np.abs(psi) ** 2
    source = np.sqrt(alpha) * modes.v * lattice.transform(rho, grid, modes)
    rotation = np.exp(-1j * dt)
    phi_end = rotation * state.phi + source * (rotation - 1.0)
    lag = -np.expm1(-1j * dt) / 1j
    phi_mean = (state.phi * lag + source * (lag - dt)) / dt
    Phi_mean = phonon_potential(phi_mean, grid, modes)
    mu_mean = 0.5 * np.sqrt(alpha) * grid.weight * np.sum(Phi_mean * rho) if gauge else 0.0
    psi = psi * np.exp(-1j * (np.sqrt(alpha) * Phi_mean - mu_mean) * dt)

    # (iii) kinetic half step
    psi = np.fft.ifftn(half_kick * np.fft.fftn(psi))

    t = state.t + dt
    if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(phi_end))):
        raise BlowUpError(t, "non-finite values in the Landau-Pekar state")
    return replace(state, psi=psi, phi=phi_end, t=t)


def default_mconst(Phi):
    return max(1.0, 1.0 - float(np.min(Phi))) + 1.0


def energy3(psi, phi, alpha, grid, modes, Mconst=None):
    """<psi, A^3 psi> with A = -Lap + sqrt(alpha) Phi + M, i.e. ||A^{3/2} psi||^2."""
    V = np.sqrt(alpha) * phonon_potential(phi, grid, modes)
    if Mconst is None:
        Mconst = default_mconst(V)
    # -Lap >= 0, so min(V) + M bounds the spectrum of A from below
    if float(np.min(V)) + Mconst <= 0:
        raise PositivityError(f"Mconst={Mconst} too small: -Lap + Phi + M is not positive (min Phi={np.min(V):.4g})")
    lam = lattice.particle_momenta(grid).reshape(grid.shape)

    def apply(u):
        return np.fft.ifftn(lam * np.fft.fftn(u)) + (V + Mconst) * u

    a_psi = apply(np.asarray(psi))
    value = grid.weight * np.vdot(a_psi, apply(a_psi))
    return float(value.real)


def diagnostics(state, ftime=0.0, Mconst=None):
    grid, modes = state.grid, state.modes
    return {
        't': state.t,
        'mass': mass(state.psi, grid),
        'energy': lp_energy(state.psi, state.phi, state.alpha, grid, modes),
        'H1': lattice.sobolev_norm(state.psi, grid, 1),
        'H3': lattice.sobolev_norm(state.psi, grid, 3),
        'L2_1': lattice.weighted_norm(state.phi, modes, 1),
        'L2_2': lattice.weighted_norm(state.phi, modes, 2),
        'f': ftime,
        'energy3': energy3(state.psi, state.phi, state.alpha, grid, modes, Mconst),
    }


@dataclass
class LPTrajectory:
    states: list
    table: pd.DataFrame

    @property
    def energy_drift(self):
        e = self.table['energy']
        return float(np.max(np.abs(e - e.iloc[0])) / max(abs(e.iloc[0]), 1e-300))

    @property
    def mass_drift(self):
        return float(np.max(np.abs(np.sqrt(self.table['mass']) - np.sqrt(self.table['mass'].iloc[0]))))


def step_count(T, dt):
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"horizon T={T} is not a multiple of dt={dt}")
    return n


def lp_evolve(initial, T, dt, sample_every=1, progress=False, scheme='strang'):
    if T <= 0:
        raise ValueError(f"horizon must be positive, got T={T}")
    n_steps = step_count(T, dt)
    if sample_every < 1 or n_steps % sample_every != 0:
        raise ValueError(f"sampling interval of {sample_every} steps does not divide {n_steps} steps")

    state = initial
    row = diagnostics(state)
    growth_prev = row['H3'] ** 2 + row['L2_2'] ** 2
    rows, states = [row], [state]
    logger.info("LP evolve: T=%g dt=%g alpha=%g grid=%s scheme=%s", T, dt, initial.alpha, initial.grid.shape, scheme)

    ftime = 0.0
    for step in tqdm(range(1, n_steps + 1), disable=not progress, desc='Landau-Pekar'):
        state = lp_advance(state, dt, scheme)
        if step % sample_every == 0:
            row = diagnostics(state, ftime)
            growth = row['H3'] ** 2 + row['L2_2'] ** 2
            # trapezoidal rule at the sampling cadence
            ftime += 0.5 * sample_every * dt * (growth_prev + growth)
            growth_prev = growth
            row['f'] = ftime
            rows.append(row)
            states.append(state)

    table = pd.DataFrame(rows, columns=trajectory_columns)
    trajectory = LPTrajectory(states=states, table=table)
    logger.info("LP evolve done: mass drift %.2e, relative energy drift %.2e",
                trajectory.mass_drift, trajectory.energy_drift)
    return trajectory


def growth_monitors(table):
    t = table['t']
    return pd.DataFrame({
        't': t,
        'H3_growth': table['H3'] / (1 + t ** 4),
        'L2_2_growth': table['L2_2'] / (1 + t ** 3),
        'energy3_growth': np.sqrt(table['energy3']) / (1 + t ** 4),
    })


def growth_bounded(table, factor=10.0, reference_time=1.0):
    """Growth monitors stay below `factor` times their maxima over [0, reference_time]."""
    monitors = growth_monitors(table)
    early = monitors[monitors['t'] <= reference_time + 1e-12]
    ok = {}
    for column in ['H3_growth', 'L2_2_growth']:
        ok[column] = bool(monitors[column].max() <= factor * early[column].max())
    return ok


def gauge_covariance_defect(initial, T, dt):
    with_gauge, without_gauge = initial, initial
    for _ in range(step_count(T, dt)):
        with_gauge = lp_step(with_gauge, dt, gauge=True)
        without_gauge = lp_step(without_gauge, dt, gauge=False)
    modulus = float(np.max(np.abs(np.abs(with_gauge.psi) - np.abs(without_gauge.psi))))
    overlap = abs(initial.grid.weight * np.vdot(with_gauge.psi, without_gauge.psi))
    return modulus, float(abs(1.0 - overlap))


def _final_state(initial, T, dt, scheme='strang'):
    state = initial
    for _ in range(step_count(T, dt)):
        state = lp_advance(state, dt, scheme)
    return state


def state_distance(a, b):
    psi = np.sqrt(a.grid.weight) * np.linalg.norm(a.psi - b.psi)
    phi = np.sqrt(a.modes.weight) * np.linalg.norm(a.phi - b.phi)
    return float(np.hypot(psi, phi))


def richardson_ratio(initial, T, dt, scheme='strang'):
    """Ratio of successive step-halving differences: 4 for second order, 16 for fourth."""
    coarse = _final_state(initial, T, dt, scheme)
    medium = _final_state(initial, T, dt / 2, scheme)
    fine = _final_state(initial, T, dt / 4, scheme)
    return state_distance(coarse, medium) / state_distance(medium, fine)


class MeanFieldPath:
    """Landau-Pekar solution sampled for a stepper running on a grid of spacing `dt`.

    Checkpoints sit at multiples of dt; values inside a step are recomputed from
    the preceding checkpoint with equal substeps no longer than dt / substeps.
    """

    def __init__(self, initial, dt, substeps=1):
        if dt <= 0 or substeps < 1:
            raise ValueError(f"invalid path resolution dt={dt}, substeps={substeps}")
        self.t0 = initial.t
        self.dt = dt
        self.substeps = int(substeps)
        self.checkpoints = [initial]

    def checkpoint(self, j):
        while len(self.checkpoints) <= j:
            state = self.checkpoints[-1]
            for _ in range(self.substeps):
                state = lp_step(state, self.dt / self.substeps)
            # pin the clock to the grid to avoid drift
            self.checkpoints.append(replace(state, t=self.t0 + len(self.checkpoints) * self.dt))
        return self.checkpoints[j]

    def at(self, t):
        offset = (t - self.t0) / self.dt
        j = int(math.floor(offset + 1e-9))
        if j < 0:
            raise ValueError(f"time {t} precedes the start of the path at {self.t0}")
        base = self.checkpoint(j)
        tau = t - base.t
        if tau <= 1e-12 * self.dt:
            return base
        pieces = int(math.ceil(tau / (self.dt / self.substeps) - 1e-9))
        state = base
        for _ in range(pieces):
            state = lp_step(state, tau / pieces)
        return state


def gaussian_psi(grid, center=None, width=0.1, momentum=None):
    x = grid.points
    center = np.full(grid.d, grid.L / 2) if center is None else np.broadcast_to(np.asarray(center, float), (grid.d,))
    # minimal image distance on the torus
    delta = (x - center + grid.L / 2) % grid.L - grid.L / 2
    psi = np.exp(-np.sum(delta ** 2, axis=1) / (2 * width ** 2))
    if momentum is not None:
        psi = psi * np.exp(2j * np.pi * x @ (np.broadcast_to(np.asarray(momentum, float), (grid.d,)) / grid.L))
    psi = psi.reshape(grid.shape).astype(complex)
    return psi / np.sqrt(mass(psi, grid))


def uniform_psi(grid):
    return np.full(grid.shape, grid.L ** (-grid.d / 2), dtype=complex)


def plane_wave_psi(grid, m):
    m = np.broadcast_to(np.asarray(m, float), (grid.d,))
    psi = np.exp(2j * np.pi * grid.points @ (m / grid.L)) * grid.L ** (-grid.d / 2)
    return psi.reshape(grid.shape)


def gaussian_phi(modes, amplitude=1.0, width=1.0):
    k2 = np.sum(modes.k ** 2, axis=1)
    return (amplitude * np.exp(-k2 / (2 * width ** 2))).astype(complex)


def make_psi(grid, preset, **params):
    if preset == 'gaussian':
        return gaussian_psi(grid, params.get('center'), params.get('width', 0.1), params.get('momentum'))
    if preset == 'uniform':
        return uniform_psi(grid)
    if preset == 'plane-wave':
        return plane_wave_psi(grid, params.get('momentum', 1))
    raise ValueError(f"unknown psi preset {preset!r}, expected one of {psi_presets}")


def make_phi(modes, preset, **params):
    if preset == 'zero':
        return np.zeros(len(modes), dtype=complex)
    if preset == 'gaussian':
        return gaussian_phi(modes, params.get('amplitude', 1.0), params.get('width', 1.0))
    if preset == 'coherent-file':
        _, phi = load_initial_data(params['path'])
        return phi
    raise ValueError(f"unknown phi preset {preset!r}, expected one of {phi_presets}")


def save_initial_data(path, psi, phi):
    np.savez(path, psi=np.asarray(psi, dtype=complex), phi=np.asarray(phi, dtype=complex))


def load_initial_data(path):
    with np.load(path) as data:
        return data['psi'].astype(complex), data['phi'].astype(complex)


def initial_state(grid, modes, alpha, psi, phi):
    psi = np.asarray(psi, dtype=complex).reshape(grid.shape)
    phi = np.asarray(phi, dtype=complex)
    if phi.shape != (len(modes),):
        raise lattice.GridError(f"phi has shape {phi.shape}, expected ({len(modes)},)")
    return LPState(psi=psi, phi=phi, t=0.0, alpha=float(alpha), grid=grid, modes=modes)
