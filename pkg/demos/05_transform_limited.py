#!/usr/bin/env python3
"""Transform-limited verdict for an exponential waveform.

A single-sided exponential with flat phase is the time-frequency
signature of a Fourier-transform-limited biphoton.  The demo reconstructs
amplitude and phase from sampled data and quantifies how flat the
recovered phase is over the bright part of the waveform.
"""

from pathlib import Path

import numpy as np

from biphoton_tomo import (
    AcquisitionConfig,
    SourceSpec,
    TomographyPlan,
    exponential_envelope,
    make_time_grid,
    phase_rmse,
    reconstruct,
    sample_histogram,
    six_pack_expected,
    six_pack_sampled,
    source_coincidence,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

grid = make_time_grid(-200.0, 200.0, 1.0)
truth = exponential_envelope(4.0e7, grid)
source = SourceSpec.from_delta(delta=2 * np.pi * 43e6, pair_rate=1e5)
acq = AcquisitionConfig(eta=0.3, bin_width=1e-9, measure_time=100.0, seed=7)
plan = TomographyPlan(t_s_ns=1.0, t_l_ns=5.8)

pack_s = six_pack_sampled(six_pack_expected(truth, source, plan.t_s_ns, acq), acq.seed)
pack_l = six_pack_sampled(six_pack_expected(truth, source, plan.t_l_ns, acq), acq.seed)
c12 = sample_histogram(source_coincidence(truth, source, acq), acq.seed)

result = reconstruct(pack_s, pack_l, c12, plan)
rmse = phase_rmse(result, truth, mask_threshold=0.1)
print(f"islands: {result.islands} (no nodes: a single island)")
print(f"recovered delta: 2*pi * {result.delta_hat / (2 * np.pi) / 1e6:.2f} MHz")
print(f"phase flatness: RMSE about constant = {rmse:.3f} rad on the 10% intensity mask")
verdict = "transform limited" if rmse <= 0.1 else "NOT transform limited"
print(f"verdict: waveform is {verdict}")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    axes[0].semilogy(grid.centers, np.maximum(c12.values, 0.5), lw=0.8)
    axes[0].set_ylabel("direct coincidences")
    axes[1].plot(grid.centers[result.valid], result.phase[result.valid], ".", ms=4)
    axes[1].axhline(0, color="k", lw=0.5)
    axes[1].set_ylabel("$\\phi(\\tau)$ (rad)")
    axes[1].set_xlabel("$\\tau$ (ns)")
    axes[1].set_xlim(-20, 120)
    axes[1].set_ylim(-2, 2)
    fig.tight_layout()
    fig.savefig(OUT / "transform_limited.png", dpi=120)
    print(f"wrote {OUT / 'transform_limited.png'}")
except ImportError:
    print("matplotlib not available; skipping plots")
