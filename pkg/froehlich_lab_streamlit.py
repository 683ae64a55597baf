import logging

import numpy as np
import pandas as pd
import streamlit as st

import harness
import landau_pekar
import lattice

# Constants
default_grid_points = 64
default_alpha = 1.0
default_width = 0.1

logging.basicConfig(level=logging.INFO, format=harness.log_format)

# Streamlit app starts here
st.set_page_config(layout="wide")  # Use the full screen width
st.title('Froehlich Mean-Field Lab')

# Sidebar for user inputs
with st.sidebar:
    st.header('User Inputs')
    mode = st.selectbox('Run', ['Landau-Pekar trajectory', 'Check suite'])
    if mode == 'Landau-Pekar trajectory':
        n = st.selectbox('Grid points', [32, 64, 128, 256], index=1)
        L = st.number_input('Torus side L', value=1.0, min_value=0.1)
        alpha = st.number_input('Coupling alpha', value=default_alpha, min_value=0.0)
        width = st.number_input('Gaussian width', value=default_width, min_value=0.01)
        phi_amplitude = st.number_input('Initial phonon amplitude', value=0.0, min_value=0.0)
        T = st.number_input('Horizon T', value=1.0, min_value=0.01)
        dt = st.number_input('Time step dt', value=1e-3, min_value=1e-5, format='%.5f')
    else:
        suite = st.selectbox('Suite', list(harness.suites))


# Function to run a Landau-Pekar trajectory and summarize its conservation laws
def run_and_measure(n, L, alpha, width, phi_amplitude, T, dt):
    grid = lattice.build_grid(1, L, n)
    modes = lattice.momentum_modes(grid)
    psi = landau_pekar.gaussian_psi(grid, width=width)
    phi = landau_pekar.gaussian_phi(modes, amplitude=phi_amplitude)
    initial = landau_pekar.initial_state(grid, modes, alpha, psi, phi)
    n_steps = landau_pekar.step_count(T, dt)
    trajectory = landau_pekar.lp_evolve(initial, T, dt, sample_every=max(1, n_steps // 100))

    summary = {
        'Mass drift': trajectory.mass_drift,
        'Relative energy drift': trajectory.energy_drift,
        'Final energy': trajectory.table['energy'].iloc[-1],
        'f(T)': trajectory.table['f'].iloc[-1],
    }
    return trajectory.table, summary


if mode == 'Landau-Pekar trajectory':
    if st.button('Run'):
        try:
            with st.spinner('Integrating...'):
                table, summary = run_and_measure(n, L, alpha, width, phi_amplitude, T, dt)
        except (ValueError, landau_pekar.BlowUpError) as error:
            st.error(f"Run failed: {error}")
        else:
            st.header("Results Summary:")
            st.dataframe(pd.DataFrame([summary]))
            st.header('Trajectory')
            st.dataframe(table)
            st.download_button('Download CSV', table.to_csv(index=False, float_format=harness.float_format),
                               file_name='lp_trajectory.csv')
else:
    if st.button('Run checks'):
        with st.spinner(f'Running {suite}...'):
            report = harness.check(suite)
        results = pd.DataFrame(report['measurements'])
        results['Outcome'] = np.where(results['passed'], 'Pass', 'Fail')
        st.header(f"Suite {suite}: {'PASS' if report['passed'] else 'FAIL'}")
        st.dataframe(results.style.map(lambda x: 'background-color : yellow' if x == 'Fail' else ''))

st.markdown("---")
st.markdown("## Attribution and caution")
st.markdown("Results come from desk-scale truncated models: finite lattices, phonon and excitation cutoffs. "
            "Trends in N and M are property-level checks and carry no asymptotic constants.")
