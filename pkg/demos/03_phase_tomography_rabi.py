#!/usr/bin/env python3
"""Full tomography of a degenerate damped-Rabi waveform.

The phase of this waveform flips by pi at every amplitude node, which is
exactly the hard case for a single-delay recursion: the nodes cut the
phase record into disconnected islands.  This demo runs the two-delay
reconstruction (fine recursion inside islands, coarse bridges across the
nodes) on shot-noise-limited data and compares against the ground truth.
Panels mirror the classic display: direct coincidences, the combined
phase difference at the coarse delay, and the stitched phase staircase.
"""

from pathlib import Path

import numpy as np

from biphoton_tomo import (
    AcquisitionConfig,
    RabiParams,
    SourceSpec,
    TomographyPlan,
    damped_rabi_envelope,
    make_time_grid,
    phase_rmse,
    reconstruct,
    sample_histogram,
    six_pack_expected,
    six_pack_sampled,
    source_coincidence,
    waveform_fidelity,
)
from biphoton_tomo.tomography import compute_lambda, compute_xi, estimate_lambda0

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

grid = make_time_grid(-200.0, 200.0, 1.0)
truth = damped_rabi_envelope(RabiParams(omega_e=2 * np.pi * 50e6, gamma=2.6e7), grid)
source = SourceSpec.from_delta(delta=0.0, pair_rate=1e5)
acq = AcquisitionConfig(eta=0.3, bin_width=1e-9, measure_time=20.0, seed=5)
plan = TomographyPlan(t_s_ns=1.0, t_l_ns=5.8)

print("simulating the six projections at T_s = 1.0 ns and T_l = 5.8 ns ...")
pack_s = six_pack_sampled(six_pack_expected(truth, source, plan.t_s_ns, acq), acq.seed)
pack_l = six_pack_sampled(six_pack_expected(truth, source, plan.t_l_ns, acq), acq.seed)
c12 = sample_histogram(source_coincidence(truth, source, acq), acq.seed)
total = pack_s.total_counts().sum() + pack_l.total_counts().sum()
print(f"total recorded coincidences: {total:.2e}")

result = reconstruct(pack_s, pack_l, c12, plan)
print(f"\nislands (bins): {result.islands}")
print(f"residual optics phase:  {result.lambda0_hat:+.4f} rad")
print(f"frequency difference:   {result.delta_hat / (2 * np.pi) / 1e6:+.2f} MHz (injected 0)")
print(f"phase RMSE vs truth:    {phase_rmse(result, truth):.3f} rad (10% intensity mask)")
print(f"waveform fidelity:      {waveform_fidelity(result, truth):.4f}")

levels = []
for lo, hi in result.islands:
    sel = result.valid.copy()
    sel[:lo] = False
    sel[hi + 1 :] = False
    levels.append(float(np.median(result.phase[sel])))
jumps = ", ".join(f"{b - a:+.3f}" for a, b in zip(levels, levels[1:]))
print(f"inter-island phase jumps: {jumps} rad (each a pi flip, modulo 2*pi)")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    prof = compute_lambda(pack_l)
    xi = compute_xi(prof, estimate_lambda0(compute_lambda(pack_s)).value)

    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    axes[0].plot(grid.centers, c12.values, lw=0.8)
    axes[0].set_ylabel("direct coincidences")
    axes[1].plot(grid.centers[xi.valid], xi.xi[xi.valid], ".", ms=3)
    axes[1].set_ylabel("$\\Xi(T_l, \\tau)$ (rad)")
    axes[2].plot(grid.centers[result.valid], result.phase[result.valid], ".", ms=4,
                 label="reconstructed")
    mask = truth.amplitude**2 >= 0.02 * (truth.amplitude**2).max()
    axes[2].plot(grid.centers[mask], truth.phase[mask] - truth.phase[result.tau0_bin],
                 lw=1, alpha=0.7, label="truth (gauge aligned)")
    axes[2].set_ylabel("$\\phi(\\tau)$ (rad)")
    axes[2].set_xlabel("$\\tau$ (ns)")
    axes[2].set_xlim(-90, 90)
    axes[2].legend()
    fig.tight_layout()
    fig.savefig(OUT / "rabi_tomography.png", dpi=120)
    print(f"wrote {OUT / 'rabi_tomography.png'}")
except ImportError:
    print("matplotlib not available; skipping plots")
