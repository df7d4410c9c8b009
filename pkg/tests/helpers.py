"""Shared test fixtures and independent oracles.

The oracles here deliberately re-derive expected values through a
different code path than the library (scalar math/cmath instead of
vectorized numpy, explicit formulas instead of library helpers) so that
agreement is evidence, not tautology.
"""

import cmath
import math

import numpy as np

from biphoton_tomo.interferometer import AcquisitionConfig, PROJECTOR_TABLE
from biphoton_tomo.waveform import (
    NS_TO_S,
    RabiParams,
    SourceSpec,
    damped_rabi_envelope,
    exponential_envelope,
    make_time_grid,
)

DELTA_43MHZ = 2 * math.pi * 43e6
OMEGA_RABI = 2 * math.pi * 50e6
GAMMA_RABI = 2.6e7
GAMMA_EXP = 4.0e7


def std_grid():
    return make_time_grid(-200.0, 200.0, 1.0)


def rabi_envelope(grid=None, phi0=0.0):
    grid = grid or std_grid()
    return damped_rabi_envelope(RabiParams(omega_e=OMEGA_RABI, gamma=GAMMA_RABI, phi0=phi0), grid)


def exp_envelope(grid=None):
    grid = grid or std_grid()
    return exponential_envelope(GAMMA_EXP, grid)


def source(delta=0.0, pair_rate=1e5):
    return SourceSpec.from_delta(delta=delta, pair_rate=pair_rate)


def acquisition(measure_time=20.0, eta=0.3, background=0.0, seed=0, bin_width=1e-9):
    return AcquisitionConfig(
        eta=eta,
        bin_width=bin_width,
        measure_time=measure_time,
        background_rate=background,
        seed=seed,
    )


def oracle_psi_lookup(env, t_ns: float) -> complex:
    """Scalar containing-bin waveform lookup, independent of env.lookup."""
    k = math.floor((t_ns - env.grid.tau_min) / env.grid.bin_width)
    if 0 <= k < env.grid.n_bins:
        return complex(env.amplitude[k] * cmath.exp(1j * env.phase[k]))
    return 0j


def oracle_joint_amplitude(
    env, delta: float, label3: str, label4: str, t_ns: float, tau_ns: float,
    residual_phase: float = 0.0,
) -> complex:
    """Direct scalar substitution into the post-splitter amplitude formula."""
    a3, th3 = PROJECTOR_TABLE[label3]
    a4, th4 = PROJECTOR_TABLE[label4]
    psi = lambda t: oracle_psi_lookup(env, t)  # noqa: E731
    b1 = cmath.exp(-1j * delta * (tau_ns - t_ns) * NS_TO_S) * psi(tau_ns - t_ns) + psi(
        t_ns - tau_ns
    )
    b2 = cmath.exp(1j * delta * t_ns * NS_TO_S) * psi(-tau_ns - t_ns) + cmath.exp(
        -1j * delta * tau_ns * NS_TO_S
    ) * psi(tau_ns + t_ns)
    c1 = 0.5 * math.cos(a3) * math.sin(a4) * cmath.exp(1j * th4) * cmath.exp(1j * residual_phase)
    c2 = 0.5 * math.sin(a3) * math.cos(a4) * cmath.exp(1j * th3)
    return c1 * b1 - c2 * b2


def oracle_expected_counts(env, src, label3, label4, t_ns, acq, residual_phase=0.0):
    """Count law applied bin by bin on top of the scalar amplitude oracle."""
    scale = src.pair_rate * acq.eta * acq.bin_width * acq.measure_time
    return np.array(
        [
            abs(oracle_joint_amplitude(env, src.delta, label3, label4, t_ns, tau, residual_phase))
            ** 2
            * scale
            + acq.background_rate
            for tau in env.grid.centers
        ]
    )


def assert_close_histogram(values, oracle, rtol=1e-12, atol_scale=1e-12):
    """Bin-wise relative agreement; bins that are ~0 in both are compared absolutely."""
    scale = max(oracle.max(), values.max())
    atol = atol_scale * scale
    np.testing.assert_allclose(values, oracle, rtol=rtol, atol=atol)
