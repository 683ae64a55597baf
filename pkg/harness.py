# Command line front end of the Froehlich lab
# - reads an experiment config (INI sections [model] [initial] [integrator] [output])
# - runs Landau-Pekar, exact many-body, Bogoliubov and comparison sweeps on a worker pool
# - fits log-log rates, writes per-cell CSVs and a report.json
# - runs the invariant check suites
#
# usage:
#   python harness.py lp-evolve --config configs/lp_conservation.ini --out runs/lp
#   python harness.py compare --config configs/particle_sweep.ini
#   python harness.py check --suite weyl

import argparse
import concurrent.futures
import configparser
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from functools import partial
from math import comb
from pathlib import Path

import numpy as np
import pandas as pd

import bogoliubov
import excitation
import fock
import froehlich_exact
import lattice
import landau_pekar

logger = logging.getLogger(__name__)

# Constants
commands = ('lp-evolve', 'exact-evolve', 'bog-evolve', 'compare')
suites = ('weyl', 'ccr', 'lp-conservation', 'excitation-roundtrip', 'sector-invariance',
          'orthogonality', 'cross-propagator')
output_formats = ('csv', 'json')
float_format = '%.17g'
trend_tolerance = 1e-10
decoupled_tolerance = 1e-8
mean_field_rate = -0.5
mean_field_rate_band = 0.4
default_seed = 20240521
compare_defect_tolerance = 1e-3
log_format = '%(asctime)s - %(levelname)s - %(message)s'


class ConfigError(ValueError):
    def __init__(self, path, line, message):
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class ModelConfig:
    d: int = 1
    L: float = 1.0
    n: int = 4
    uv_cutoff: float = None
    alpha: float = 1.0
    N: tuple = (2,)
    n_max: int = 8
    M: tuple = (6,)


@dataclass(frozen=True)
class InitialConfig:
    psi: str = 'gaussian'
    psi_params: dict = field(default_factory=dict)
    phi: str = 'zero'
    phi_params: dict = field(default_factory=dict)
    chi: str = 'vacuum'
    chi_file: str = None


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-2
    T: float = 1.0
    krylov_tol: float = 1e-12
    sample_every: int = 10
    scheme: str = 'midpoint'
    lp_substeps: int = 4
    lp_scheme: str = 'strang'


@dataclass(frozen=True)
class OutputConfig:
    directory: str = 'runs'
    formats: tuple = output_formats


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    initial: InitialConfig
    integrator: IntegratorConfig
    output: OutputConfig
    source: str = None


@dataclass
class RateFit:
    abscissae: list
    ordinates: list
    slope: float
    intercept: float
    residual: float


@dataclass
class Measurement:
    name: str
    value: float
    tolerance: float
    passed: bool


def _line_of(path, section, key):
    # configparser drops positions, so find them in the raw text
    current = None
    for number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if line.startswith('[') and line.endswith(']'):
            current = line[1:-1].strip()
        elif current == section and key is not None and line.split('=')[0].split(':')[0].strip().lower() == key:
            return number
    return None


def _parse(path, parser, section, key, convert, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    if raw == '' or raw.lower() == 'none':
        return default
    try:
        return convert(raw)
    except ValueError as error:
        raise ConfigError(path, _line_of(path, section, key), f"[{section}] {key} = {raw!r}: {error}") from None


def _list_of(convert):
    def parse(raw):
        values = tuple(convert(item.strip()) for item in raw.split(',') if item.strip())
        if not values:
            raise ValueError("empty list")
        return values
    return parse


def _vector(raw):
    values = [float(item) for item in raw.split(',')]
    return values[0] if len(values) == 1 else values


def load_config(path):
    parser = configparser.ConfigParser()
    try:
        with open(path) as handle:
            parser.read_file(handle)
    except configparser.Error as error:
        raise ConfigError(path, getattr(error, 'lineno', None), str(error)) from None
    for section in ('model', 'initial', 'integrator'):
        if not parser.has_section(section):
            raise ConfigError(path, None, f"missing section [{section}]")

    get = lambda section, key, convert, default: _parse(path, parser, section, key, convert, default)
    model = ModelConfig(
        d=get('model', 'd', int, 1),
        L=get('model', 'l', float, 1.0),
        n=get('model', 'n', int, 4),
        uv_cutoff=get('model', 'uv_cutoff', float, None),
        alpha=get('model', 'alpha', float, 1.0),
        N=get('model', 'n_particles', _list_of(int), (2,)),
        n_max=get('model', 'n_max', int, 8),
        M=get('model', 'm', _list_of(int), (6,)),
    )

    psi_params, phi_params = {}, {}
    for key in ('center', 'width', 'momentum'):
        value = get('initial', f'psi_{key}', _vector, None)
        if value is not None:
            psi_params[key] = value
    for key in ('amplitude', 'width'):
        value = get('initial', f'phi_{key}', float, None)
        if value is not None:
            phi_params[key] = value
    phi_file = get('initial', 'phi_file', str, None)
    if phi_file is not None:
        phi_params['path'] = phi_file
    initial = InitialConfig(
        psi=get('initial', 'psi', str, 'gaussian'),
        psi_params=psi_params,
        phi=get('initial', 'phi', str, 'zero'),
        phi_params=phi_params,
        chi=get('initial', 'chi', str, 'vacuum'),
        chi_file=get('initial', 'chi_file', str, None),
    )
    integrator = IntegratorConfig(
        dt=get('integrator', 'dt', float, 1e-2),
        T=get('integrator', 't', float, 1.0),
        krylov_tol=get('integrator', 'krylov_tol', float, 1e-12),
        sample_every=get('integrator', 'sample_every', int, 10),
        scheme=get('integrator', 'scheme', str, 'midpoint'),
        lp_substeps=get('integrator', 'lp_substeps', int, 4),
        lp_scheme=get('integrator', 'lp_scheme', str, 'strang'),
    )
    output = OutputConfig(
        directory=get('output', 'directory', str, 'runs') if parser.has_section('output') else 'runs',
        formats=get('output', 'formats', _list_of(str), output_formats) if parser.has_section('output') else output_formats,
    )
    config = ExperimentConfig(model, initial, integrator, output, source=str(path))
    validate_config(config)
    return config


def validate_config(config):
    path = config.source
    checks = [
        ('model', 'n_particles', all(N >= 1 for N in config.model.N), "particle numbers must be >= 1"),
        ('model', 'm', all(M >= 1 for M in config.model.M), "excitation cutoffs must be >= 1"),
        ('model', 'alpha', config.model.alpha >= 0, "coupling must be >= 0"),
        ('model', 'n_max', config.model.n_max >= 1, "phonon cutoff must be >= 1"),
        ('integrator', 'dt', 0 < config.integrator.dt < config.integrator.T, "need 0 < dt < T"),
        ('integrator', 'sample_every', config.integrator.sample_every >= 1, "sample_every must be >= 1"),
        ('integrator', 'lp_substeps', config.integrator.lp_substeps >= 1, "lp_substeps must be >= 1"),
        ('integrator', 'scheme', config.integrator.scheme in bogoliubov.integrators,
         f"scheme must be one of {bogoliubov.integrators}"),
        ('integrator', 'lp_scheme', config.integrator.lp_scheme in landau_pekar.lp_schemes,
         f"lp_scheme must be one of {landau_pekar.lp_schemes}"),
        ('initial', 'psi', config.initial.psi in landau_pekar.psi_presets,
         f"psi preset must be one of {landau_pekar.psi_presets}"),
        ('initial', 'phi', config.initial.phi in landau_pekar.phi_presets,
         f"phi preset must be one of {landau_pekar.phi_presets}"),
        ('initial', 'chi', config.initial.chi in bogoliubov.chi_presets,
         f"chi preset must be one of {bogoliubov.chi_presets}"),
        ('output', 'formats', set(config.output.formats) <= set(output_formats),
         f"formats must be taken from {output_formats}"),
    ]
    if config.initial.phi == 'coherent-file' and 'path' not in config.initial.phi_params:
        checks.append(('initial', 'phi', False, "coherent-file preset needs phi_file"))
    if config.initial.chi == 'custom-file' and not config.initial.chi_file:
        checks.append(('initial', 'chi', False, "custom-file preset needs chi_file"))
    for section, key, ok, message in checks:
        if not ok:
            line = _line_of(path, section, key) if path and Path(path).exists() else None
            raise ConfigError(path, line, message)
    try:
        lattice.build_grid(config.model.d, config.model.L, config.model.n)
    except lattice.GridError as error:
        raise ConfigError(path, _line_of(path, 'model', 'n') if path and Path(path).exists() else None, str(error)) from None


def fit_rate(abscissae, ordinates):
    """Least-squares line through (log x, log y)."""
    x = np.asarray(abscissae, dtype=float)
    y = np.asarray(ordinates, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise ValueError(f"need at least 3 matching points, got {x.size} and {y.size}")
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("rate fits need positive abscissae and ordinates")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    residual = float(np.sqrt(np.mean((np.log(y) - (slope * np.log(x) + intercept)) ** 2)))
    return RateFit(list(map(float, x)), list(map(float, y)), float(slope), float(intercept), residual)


def strictly_decreasing(values, tol=trend_tolerance):
    return all(later < earlier - tol for earlier, later in zip(values, values[1:]))


def build_setup(config):
    """Grid, mode set and the initial Landau-Pekar state of a config."""
    model, initial = config.model, config.initial
    grid = lattice.build_grid(model.d, model.L, model.n)
    modes = lattice.momentum_modes(grid, model.uv_cutoff)
    psi = landau_pekar.make_psi(grid, initial.psi, **initial.psi_params)
    phi = landau_pekar.make_phi(modes, initial.phi, **initial.phi_params)
    return grid, modes, landau_pekar.initial_state(grid, modes, model.alpha, psi, phi)


def memory_guard(config, command, limit=froehlich_exact.max_nonzeros):
    """Rough nonzero count of the largest operator a command assembles (0 for lp-evolve)."""
    if command == 'lp-evolve':
        return 0
    grid, modes, _ = build_setup(config)
    D, K = grid.size, len(modes)
    needed = 0
    if command in ('exact-evolve', 'compare'):
        phonon_dim = comb(config.model.n_max + K, K)
        needed = max(comb(N + D - 1, N) for N in config.model.N) * phonon_dim * (D * D + 2 * K + 1)
    if command in ('bog-evolve', 'compare'):
        needed = max(needed, comb(max(config.model.M) + D + K, D + K) * (D * D + 4 * D * K + 1))
    if needed > limit:
        raise froehlich_exact.DimensionOverflowError(needed, limit)
    return needed


def worker_count():
    value = os.environ.get('FROEHLICH_WORKERS')
    if value:
        return max(1, int(value))
    return min(4, os.cpu_count() or 1)


def mean_field_path(config, lp_initial):
    return landau_pekar.MeanFieldPath(lp_initial, config.integrator.dt, config.integrator.lp_substeps)


def write_table(table, directory, name):
    table.to_csv(Path(directory) / name, index=False, float_format=float_format)


def write_mean_field(config, lp_initial, directory):
    """Landau-Pekar table along the path a fluctuation or exact cell samples.

    Same Strang substeps as MeanFieldPath, rows at the cell's sampling cadence.
    """
    substeps = config.integrator.lp_substeps
    trajectory = landau_pekar.lp_evolve(lp_initial, config.integrator.T, config.integrator.dt / substeps,
                                        config.integrator.sample_every * substeps)
    write_table(trajectory.table, directory, 'lp_trajectory.csv')
    return trajectory


def lp_cell(config, directory, progress=False):
    _, _, lp_initial = build_setup(config)
    trajectory = landau_pekar.lp_evolve(lp_initial, config.integrator.T, config.integrator.dt,
                                        config.integrator.sample_every, progress, config.integrator.lp_scheme)
    write_table(trajectory.table, directory, 'lp_trajectory.csv')
    monitors = landau_pekar.growth_monitors(trajectory.table)
    write_table(monitors, directory, 'growth_monitors.csv')
    return {
        'mass_drift': trajectory.mass_drift,
        'energy_drift': trajectory.energy_drift,
        'growth_bounded': landau_pekar.growth_bounded(trajectory.table),
        'final': trajectory.table.iloc[-1].to_dict(),
    }


def _exact_setup(config, N):
    grid, modes, lp_initial = build_setup(config)
    params = froehlich_exact.FroehlichParams(N=N, alpha=config.model.alpha, grid=grid, modes=modes,
                                             n_max=config.model.n_max)
    basis = froehlich_exact.ManyBodyBasis(params)
    H = froehlich_exact.assemble_froehlich(params, basis)
    return grid, modes, lp_initial, basis, H


def _initial_chi(config, basis, lp_initial):
    return bogoliubov.make_chi(config.initial.chi, basis, lp_initial.psi, lp_initial.grid, config.initial.chi_file)


def exact_cell(config, N, directory, progress=False):
    grid, modes, lp_initial, basis, H = _exact_setup(config, N)
    path = mean_field_path(config, lp_initial)
    write_mean_field(config, lp_initial, directory)
    chi0 = _initial_chi(config, excitation.excitation_basis(basis), lp_initial)
    state = excitation.inverse_excitation(chi0, lp_initial.psi, lp_initial.phi, basis)

    def observer(t, current):
        mean_field = path.at(t)
        return froehlich_exact.convergence_observables(current, mean_field.psi, mean_field.phi)

    trajectory = froehlich_exact.evolve_exact(state, H, config.integrator.T, config.integrator.dt,
                                              config.integrator.krylov_tol, config.integrator.sample_every, observer,
                                              progress)
    table = trajectory.table[froehlich_exact.exact_columns]
    write_table(table, directory, 'exact.csv')
    final = table.iloc[-1]
    return {
        'N': N,
        'dimension': basis.dim,
        'norm_drift': trajectory.norm_drift,
        'energy_drift': trajectory.energy_drift,
        'final': final.to_dict(),
    }


def bogoliubov_cell(config, M, keep_states, directory, progress=False):
    grid, modes, lp_initial = build_setup(config)
    path = mean_field_path(config, lp_initial)
    write_mean_field(config, lp_initial, directory)
    basis = bogoliubov.bogoliubov_basis(grid, modes, M)
    chi0 = _initial_chi(config, basis, lp_initial)
    trajectory = bogoliubov.evolve_bogoliubov(chi0, path, config.integrator.T, config.integrator.dt, M,
                                              config.integrator.scheme, config.integrator.krylov_tol,
                                              config.integrator.sample_every, progress=progress)
    write_table(trajectory.table[bogoliubov.trajectory_columns], directory, 'bogoliubov.csv')
    result = {
        'M': M,
        'dimension': basis.dim,
        'norm_drift': trajectory.norm_drift,
        'max_leakage': float(trajectory.table['leakage'].max()),
        'max_orthogonality_defect': trajectory.max_orthogonality_defect,
        'admissibility': bogoliubov.admissibility(chi0, grid),
    }
    if keep_states:
        result['_trajectory'] = trajectory
    return result


def compare_cell(config, N, directory, progress=False):
    """Exact flow against the Pekar product and the Bogoliubov-corrected state for one N."""
    grid, modes, lp_initial, basis, H = _exact_setup(config, N)
    path = mean_field_path(config, lp_initial)
    write_mean_field(config, lp_initial, directory)
    M = max(config.model.M)
    bog_basis = bogoliubov.bogoliubov_basis(grid, modes, M)
    chi0 = _initial_chi(config, bog_basis, lp_initial)
    chi0_exc, _ = bog_basis.transfer(chi0.coeffs, excitation.excitation_basis(basis))
    state = excitation.inverse_excitation(
        bogoliubov.DoubleFockState(excitation.excitation_basis(basis), chi0_exc),
        lp_initial.psi, lp_initial.phi, basis)

    bog = bogoliubov.evolve_bogoliubov(chi0, path, config.integrator.T, config.integrator.dt, M,
                                       config.integrator.scheme, config.integrator.krylov_tol,
                                       config.integrator.sample_every, progress=progress)
    corrected = {}
    for t, chi in zip(bog.table['t'], bog.states):
        mean_field = path.at(t)
        psi_B = excitation.build_psi_B(chi, mean_field.psi, mean_field.phi, basis, compare_defect_tolerance)
        corrected[round(t, 12)] = (psi_B, mean_field)

    def observer(t, current):
        (psi_B, tail), mean_field = corrected[round(t, 12)]
        row = froehlich_exact.convergence_observables(current, mean_field.psi, mean_field.phi)
        row['psi_B_distance'] = excitation.norm_distance(current, psi_B)
        row['product_distance'] = excitation.pekar_product_distance(current, mean_field.psi, mean_field.phi)
        row['discarded_tail'] = tail
        return row

    exact = froehlich_exact.evolve_exact(state, H, config.integrator.T, config.integrator.dt,
                                         config.integrator.krylov_tol, config.integrator.sample_every, observer,
                                         progress)
    columns = froehlich_exact.exact_columns + ['psi_B_distance', 'product_distance', 'discarded_tail']
    write_table(exact.table[columns], directory, 'compare.csv')
    write_table(bog.table[bogoliubov.trajectory_columns], directory, 'bogoliubov.csv')
    return {
        'N': N,
        'M': M,
        'norm_drift': exact.norm_drift,
        'energy_drift': exact.energy_drift,
        'final': exact.table[columns].iloc[-1].to_dict(),
        'max_coupling_observable': float(exact.table[['a', 'b', 'psi_B_distance']].abs().max().max()),
    }


def _run_cell(task, directory):
    # cells write into a private directory that is moved into place when complete
    name, function, args = task
    staging = Path(tempfile.mkdtemp(prefix=f'.{name}-', dir=directory))
    try:
        result = function(*args, staging)
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    target = Path(directory) / name
    if target.exists():
        shutil.rmtree(target)
    os.replace(staging, target)
    return result


def run_cells(tasks, directory, workers=None):
    results = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers or worker_count()) as executor:
        futures = {executor.submit(_run_cell, task, directory): task[0] for task in tasks}
        for future in concurrent.futures.as_completed(futures):
            name = futures[future]
            try:
                results[name] = {'status': 'ok', **future.result()}
                logger.info("cell %s done", name)
            except Exception as error:
                logger.error("cell %s failed: %s: %s", name, type(error).__name__, error)
                results[name] = {'status': 'failed', 'error': f"{type(error).__name__}: {error}"}
    return dict(sorted(results.items()))


def _claim(name, passed, tolerance, **values):
    return {'name': name, 'passed': bool(passed), 'tolerance': tolerance, **values}


def _trend_claims(label, abscissae, values):
    claims = [_claim(f'{label} strictly decreasing', strictly_decreasing(values), trend_tolerance, values=values)]
    if len(values) >= 3 and all(v > 0 for v in values):
        rate = fit_rate(abscissae, values)
        claims.append(_claim(f'{label} fitted slope negative', rate.slope < 0, 0.0, fit=asdict(rate)))
    return claims


def summarize(command, config, cells):
    claims = []
    ok = {name: cell for name, cell in cells.items() if cell['status'] == 'ok'}
    if command == 'lp-evolve' and 'lp' in ok:
        cell = ok['lp']
        claims.append(_claim('mass conserved', cell['mass_drift'] < 1e-10, 1e-10, value=cell['mass_drift']))
        claims.append(_claim('energy conserved', cell['energy_drift'] < 1e-6, 1e-6, value=cell['energy_drift']))
        claims.append(_claim('growth monitors bounded', all(cell['growth_bounded'].values()), 10.0,
                             value=cell['growth_bounded']))
    if command in ('exact-evolve', 'compare'):
        rows = sorted((cell['N'], cell['final']) for cell in ok.values())
        Ns = [N for N, _ in rows]
        if len(rows) >= 2:
            claims += _trend_claims('b at final time', Ns, [final['b'] for _, final in rows])
            claims += _trend_claims('Sobolev trace distance at final time', Ns,
                                    [final['sobolev_trace_distance'] for _, final in rows])
        distances = [final['sobolev_trace_distance'] for _, final in rows]
        if len(rows) >= 3 and all(v > 0 for v in distances):
            slope = fit_rate(Ns, distances).slope
            # informational only
            claims.append({'name': 'Sobolev trace distance slope near -1/2', 'informational': True,
                           'value': slope, 'reference': mean_field_rate, 'band': mean_field_rate_band,
                           'within_band': abs(slope - mean_field_rate) <= mean_field_rate_band})
        if command == 'compare' and rows:
            if len(rows) >= 2:
                claims += _trend_claims('Psi^B distance at final time', Ns, [final['psi_B_distance'] for _, final in rows])
            _, largest = rows[-1]
            claims.append(_claim('Bogoliubov correction beats the product state at the largest N',
                                 largest['psi_B_distance'] < largest['product_distance'], 0.0,
                                 value=largest['psi_B_distance'], reference=largest['product_distance']))
            if config.model.alpha == 0:
                worst = max(cell['max_coupling_observable'] for cell in ok.values())
                claims.append(_claim('decoupled baseline pass', worst < decoupled_tolerance, decoupled_tolerance,
                                     value=worst))
    if command == 'bog-evolve':
        for name, cell in ok.items():
            if 'max_leakage' not in cell:
                continue
            claims.append(_claim(f'{name}: no leakage above M', cell['max_leakage'] == 0.0, 0.0, value=cell['max_leakage']))
        if 'refinement' in ok and len(ok['refinement']['M']) >= 2:
            claims += _trend_claims('distance to the reference cutoff', ok['refinement']['M'], ok['refinement']['distance'])
    failed = [name for name, cell in cells.items() if cell['status'] != 'ok']
    passed = not failed and all(claim.get('passed', True) for claim in claims)
    return {'command': command, 'passed': passed, 'failed_cells': failed, 'claims': claims}


def _refinement(results, directory):
    # distance of each truncated trajectory to the largest cutoff at every shared sample time
    trajectories = {cell['M']: cell.pop('_trajectory') for cell in results.values() if '_trajectory' in cell}
    if len(trajectories) < 2:
        return None
    M_ref = max(trajectories)
    reference = trajectories[M_ref]
    rows = []
    for M in sorted(trajectories):
        if M == M_ref:
            continue
        for t, chi, chi_ref in zip(trajectories[M].table['t'], trajectories[M].states, reference.states):
            rows.append({'M': M, 't': t, 'distance': bogoliubov.refinement_distance(chi, chi_ref)})
    table = pd.DataFrame(rows, columns=['M', 't', 'distance'])
    Path(directory, 'refinement').mkdir(exist_ok=True)
    write_table(table, Path(directory, 'refinement'), 'refinement.csv')
    final = table[table['t'] == table['t'].max()]
    return {'status': 'ok', 'M_ref': M_ref, 'M': final['M'].tolist(), 'distance': final['distance'].tolist()}


def run(config, command, out=None, workers=None, progress=False):
    """Run one command of a config; returns the report (also written as report.json)."""
    if command not in commands:
        raise ValueError(f"unknown command {command!r}, expected one of {commands}")
    directory = Path(out or config.output.directory)
    directory.mkdir(parents=True, exist_ok=True)
    memory_guard(config, command)
    logger.info("%s: config %s -> %s", command, config.source, directory)

    if command == 'lp-evolve':
        tasks = [('lp', partial(lp_cell, progress=progress), (config,))]
    elif command == 'exact-evolve':
        tasks = [(f'N{N}', partial(exact_cell, progress=progress), (config, N)) for N in config.model.N]
    elif command == 'bog-evolve':
        tasks = [(f'M{M}', partial(bogoliubov_cell, progress=progress), (config, M, True)) for M in config.model.M]
    else:
        tasks = [(f'N{N}', partial(compare_cell, progress=progress), (config, N)) for N in config.model.N]

    cells = run_cells(tasks, directory, workers)
    if command == 'bog-evolve':
        refinement = _refinement(cells, directory)
        if refinement is not None:
            cells['refinement'] = refinement
    report = summarize(command, config, cells)
    report['cells'] = cells
    report['config'] = asdict(config)
    if 'json' in config.output.formats:
        with open(directory / 'report.json', 'w') as handle:
            json.dump(report, handle, indent=2, sort_keys=True, default=float)
    logger.info("%s: %s", command, 'PASS' if report['passed'] else 'FAIL')
    return report


# Check suites

def _measure(name, value, tolerance, exact=False):
    value = float(value)
    passed = value == 0.0 if exact else value < tolerance
    return Measurement(name, value, tolerance, passed)


def small_instance(alpha=0.05, phi_amplitude=0.1, L=4.0, n=4):
    """d=1 lattice with n sites and the two phonon modes k = +-1/L."""
    grid = lattice.build_grid(1, L, n)
    modes = lattice.momentum_modes(grid, uv_cutoff=1.0 / L)
    psi = landau_pekar.gaussian_psi(grid, width=1.0)
    phi = landau_pekar.gaussian_phi(modes, amplitude=phi_amplitude, width=1.0)
    return landau_pekar.initial_state(grid, modes, alpha, psi, phi)


def check_weyl():
    f = 1.5
    # the top amplitude must sit well below the shift tolerance
    n_max = next(n for n in range(1, 200) if fock.coherent_tail_mass([f], n) < 1e-20)
    basis = fock.OccupationBasis(1, n_max)
    coherent = fock.coherent_state([f], basis)
    a = basis.annihilator(0)
    shift = np.linalg.norm(a @ coherent.coeffs - f * coherent.coeffs)

    rng = np.random.default_rng(default_seed)
    v = np.zeros(basis.dim, dtype=complex)
    v[:5] = rng.normal(size=5) + 1j * rng.normal(size=5)
    v = fock.FockVector(basis, v / np.linalg.norm(v))
    round_trip = np.linalg.norm(fock.weyl_displace([f], fock.weyl_displace([-f], v)).coeffs - v.coeffs)

    occupation = np.vdot(coherent.coeffs, basis.totals * coherent.coeffs).real
    oracle = np.linalg.norm(coherent.coeffs - fock.coherent_amplitudes(f, n_max))

    # composition W(f)W(g) = exp(-i Im<f,g>) W(f+g) on two modes
    pair = fock.OccupationBasis(2, n_max)
    g1, g2 = np.array([0.6, 0.3j]), np.array([-0.2j, 0.5])
    composed = fock.weyl_displace(g1, fock.coherent_state(g2, pair)).coeffs
    direct = np.exp(-1j * np.imag(np.vdot(g1, g2))) * fock.coherent_state(g1 + g2, pair).coeffs
    return [
        _measure('shift property ||(a - f) W(f) Omega||', shift, 1e-7),
        _measure('W(f) W(-f) = 1', round_trip, 1e-8),
        _measure('<N_a> of W(f) Omega - |f|^2', abs(occupation - f ** 2), 1e-7),
        _measure('coherent amplitudes vs closed form', oracle, 1e-8),
        _measure('Weyl composition phase', np.linalg.norm(composed - direct), 1e-7),
    ]


def check_ccr():
    basis = fock.OccupationBasis(2, 5)
    rng = np.random.default_rng(default_seed)
    v = (rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)) * (basis.totals < basis.n_max)
    results = []
    for m in range(2):
        a, a_dag = basis.annihilator(m), basis.creator(m)
        results.append(_measure(f'[a_{m}, a*_{m}] = 1 below the top sector',
                                np.linalg.norm(a @ (a_dag @ v) - a_dag @ (a @ v) - v), 1e-12))
    a0, a1_dag = basis.annihilator(0), basis.creator(1)
    results.append(_measure('[a_0, a*_1] = 0', np.linalg.norm(a0 @ (a1_dag @ v) - a1_dag @ (a0 @ v)), 1e-12))
    return results


def check_lp_conservation(T=5.0, growth_T=10.0, dt=1e-3):
    grid = lattice.build_grid(1, 1.0, 256)
    modes = lattice.momentum_modes(grid)
    psi = landau_pekar.gaussian_psi(grid, width=0.1)
    initial = landau_pekar.initial_state(grid, modes, 1.0, psi, np.zeros(len(modes), dtype=complex))
    trajectory = landau_pekar.lp_evolve(initial, T, dt, sample_every=100, scheme='suzuki4')
    # the Strang drift itself only has to fall like dt^2
    coarse = landau_pekar.lp_evolve(initial, T, dt, sample_every=100).energy_drift
    fine = landau_pekar.lp_evolve(initial, T, dt / 2, sample_every=200).energy_drift
    ratio = landau_pekar.richardson_ratio(initial, T, dt)
    long_run = landau_pekar.lp_evolve(initial, growth_T, dt, sample_every=100)
    bounded = landau_pekar.growth_bounded(long_run.table)
    modulus, overlap = landau_pekar.gauge_covariance_defect(initial, 1.0, dt)
    return [
        _measure('mass drift', trajectory.mass_drift, 1e-10),
        _measure('relative energy drift', trajectory.energy_drift, 1e-6),
        _measure('Strang energy drift halving ratio - 4', abs(coarse / fine - 4.0), 1.0),
        _measure('Richardson ratio - 4', abs(ratio - 4.0), 0.8),
        _measure('growth monitors above 10x early maxima', sum(not ok for ok in bounded.values()), 1),
        _measure('gauge covariance |psi| defect', modulus, 1e-9),
        _measure('gauge covariance overlap defect', overlap, 1e-9),
    ]


def check_excitation_roundtrip(samples=20):
    lp = small_instance(phi_amplitude=0.05)
    params = froehlich_exact.FroehlichParams(N=3, alpha=lp.alpha, grid=lp.grid, modes=lp.modes, n_max=4)
    basis = froehlich_exact.ManyBodyBasis(params)
    rng = np.random.default_rng(default_seed)
    worst_round_trip, worst_isometry = 0.0, 0.0
    for _ in range(samples):
        coeffs = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
        state = froehlich_exact.ManyBodyState(basis, coeffs / np.linalg.norm(coeffs))
        chi = excitation.excitation_map(state, lp.psi, lp.phi)
        back = excitation.inverse_excitation(chi, lp.psi, lp.phi, basis)
        worst_round_trip = max(worst_round_trip, excitation.norm_distance(back, state))
        worst_isometry = max(worst_isometry, abs(chi.norm() - state.norm()))
    return [
        _measure('inverse(map(Psi)) - Psi', worst_round_trip, 1e-8),
        _measure('| ||chi|| - ||Psi|| |', worst_isometry, 1e-8),
    ]


def check_sector_invariance(M=6, T=2.0, dt=1e-2):
    lp = small_instance()
    path = landau_pekar.MeanFieldPath(lp, dt, substeps=4)
    # two spare excitation levels make leakage observable
    basis = bogoliubov.bogoliubov_basis(lp.grid, lp.modes, M + 2)
    chi0 = bogoliubov.single_excitation(basis, lp.psi, lp.grid)
    trajectory = bogoliubov.evolve_bogoliubov(chi0, path, T, dt, M, sample_every=10)
    return [
        _measure('leakage ||1(N > M) chi||', trajectory.table['leakage'].max(), 0.0, exact=True),
        _measure('norm drift', trajectory.norm_drift, 1e-8),
    ]


def check_orthogonality(M=6, N=3, T=2.0, dt=1e-3):
    lp = small_instance()
    path = landau_pekar.MeanFieldPath(lp, dt, substeps=16)
    bog_basis = bogoliubov.bogoliubov_basis(lp.grid, lp.modes, M)
    bog = bogoliubov.evolve_bogoliubov(bogoliubov.single_excitation(bog_basis, lp.psi, lp.grid), path, T, dt, M,
                                       scheme='cfm4', sample_every=100)
    fl_basis = bogoliubov.fluctuation_basis(lp.grid, lp.modes, N, M)
    fluct = bogoliubov.evolve_fluctuation(bogoliubov.single_excitation(fl_basis, lp.psi, lp.grid), path, T, dt, N,
                                          scheme='cfm4', sample_every=100)
    return [
        _measure('Bogoliubov orthogonality defect', bog.max_orthogonality_defect, 1e-7),
        _measure('fluctuation orthogonality defect', fluct.max_orthogonality_defect, 1e-7),
        _measure('Bogoliubov norm drift', bog.norm_drift, 1e-8),
        _measure('fluctuation norm drift', fluct.norm_drift, 1e-8),
    ]


def check_cross_propagator(N=3, n_max=14, T=1.0, dt=1e-3):
    """U_N(T) Psi_T from the exact flow against the fluctuation flow of U_N(0) Psi_0."""
    lp = small_instance()
    params = froehlich_exact.FroehlichParams(N=N, alpha=lp.alpha, grid=lp.grid, modes=lp.modes, n_max=n_max)
    basis = froehlich_exact.ManyBodyBasis(params)
    H = froehlich_exact.assemble_froehlich(params, basis)
    target = excitation.excitation_basis(basis)

    # condensate plus a small admixture of one excitation
    chi0 = bogoliubov.single_excitation(target, lp.psi, lp.grid)
    coeffs = 0.3 * chi0.coeffs + target.vacuum()
    chi0 = bogoliubov.DoubleFockState(target, coeffs / np.linalg.norm(coeffs))
    state0 = excitation.inverse_excitation(chi0, lp.psi, lp.phi, basis)

    path = landau_pekar.MeanFieldPath(lp, dt, substeps=16)
    n_steps = landau_pekar.step_count(T, dt)
    fluctuation = bogoliubov.evolve_fluctuation(chi0, path, T, dt, N, scheme='cfm4', sample_every=n_steps)
    exact = froehlich_exact.evolve_exact(state0, H, T, 1e-2, sample_every=100)
    final = path.at(T)
    mapped = excitation.excitation_map(exact.states[-1], final.psi, final.phi)
    return [
        _measure('||U_N(T) Psi_T - chi(T)||', np.linalg.norm(mapped.coeffs - fluctuation.states[-1].coeffs), 1e-5),
        _measure('exact norm drift', exact.norm_drift, 1e-10),
    ]


suite_functions = {
    'weyl': check_weyl,
    'ccr': check_ccr,
    'lp-conservation': check_lp_conservation,
    'excitation-roundtrip': check_excitation_roundtrip,
    'sector-invariance': check_sector_invariance,
    'orthogonality': check_orthogonality,
    'cross-propagator': check_cross_propagator,
}


def check(suite):
    if suite not in suite_functions:
        raise ValueError(f"unknown suite {suite!r}, expected one of {suites}")
    logger.info("check %s", suite)
    measurements = suite_functions[suite]()
    for m in measurements:
        level = logging.INFO if m.passed else logging.WARNING
        logger.log(level, "%s %s: %.3e (tolerance %.0e)", 'PASS' if m.passed else 'FAIL', m.name, m.value, m.tolerance)
    return {'suite': suite, 'passed': all(m.passed for m in measurements),
            'measurements': [asdict(m) for m in measurements]}


def setup_logging(level=None, logfile=None):
    level = os.environ.get('FROEHLICH_LOG_LEVEL', level or 'INFO').upper()
    handlers = [logging.StreamHandler(sys.stdout)]
    if logfile is not None:
        handlers.append(logging.FileHandler(logfile))
    logging.basicConfig(level=level, format=log_format, handlers=handlers, force=True)


def build_parser():
    parser = argparse.ArgumentParser(description="Froehlich mean-field lab: Landau-Pekar, exact and Bogoliubov dynamics")
    parser.add_argument('--log-level', default=None, help="logging level (FROEHLICH_LOG_LEVEL overrides)")
    sub = parser.add_subparsers(dest='command', required=True)
    for command in commands:
        p = sub.add_parser(command)
        p.add_argument('--config', required=True, help="experiment config (INI)")
        p.add_argument('--out', default=None, help="output directory (default: [output] directory)")
        p.add_argument('--workers', type=int, default=None, help="worker pool size (default: FROEHLICH_WORKERS)")
        p.add_argument('--progress', action='store_true', help="show progress bars for the time loops")
    p = sub.add_parser('check')
    p.add_argument('--suite', required=True, choices=suites + ('all',))
    p.add_argument('--out', default=None, help="directory for report.json")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    setup_logging(args.log_level, out / 'run.log' if out is not None else None)

    if args.command == 'check':
        names = suites if args.suite == 'all' else (args.suite,)
        reports = [check(name) for name in names]
        report = {'passed': all(r['passed'] for r in reports), 'suites': reports}
        if out is not None:
            with open(out / 'report.json', 'w') as handle:
                json.dump(report, handle, indent=2, sort_keys=True)
        print(json.dumps(report, indent=2, sort_keys=True))
        return 0 if report['passed'] else 1

    try:
        config = load_config(args.config)
    except ConfigError as error:
        logger.error("%s", error)
        return 2
    try:
        report = run(config, args.command, out, args.workers, args.progress)
    except froehlich_exact.DimensionOverflowError as error:
        logger.error("%s", error)
        return 1
    return 0 if report['passed'] else 1


if __name__ == "__main__":
    sys.exit(main())
