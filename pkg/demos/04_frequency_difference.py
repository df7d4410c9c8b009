#!/usr/bin/env python3
"""Recovering the photon frequency difference from the Xi step at tau = 0.

For nondegenerate pairs the combined phase difference Xi jumps by
2*delta*T_l across tau = 0.  With T_l = 5.8 ns and delta = 2*pi*43 MHz
the step is 3.134 rad -- within a whisker of pi, so the wrap branch must
be picked with the help of the fine delay.  The demo reconstructs delta
from shot-noise-limited data and shows the branch logic working.
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
    reconstruct,
    sample_histogram,
    six_pack_expected,
    six_pack_sampled,
    source_coincidence,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

delta = 2 * np.pi * 43e6
grid = make_time_grid(-200.0, 200.0, 1.0)
truth = damped_rabi_envelope(RabiParams(omega_e=2 * np.pi * 50e6, gamma=2.6e7), grid)
source = SourceSpec.from_delta(delta=delta, pair_rate=1e5)
acq = AcquisitionConfig(eta=0.3, bin_width=1e-9, measure_time=20.0, seed=6)
plan = TomographyPlan(t_s_ns=1.0, t_l_ns=5.8)

pack_s = six_pack_sampled(six_pack_expected(truth, source, plan.t_s_ns, acq), acq.seed)
pack_l = six_pack_sampled(six_pack_expected(truth, source, plan.t_l_ns, acq), acq.seed)
c12 = sample_histogram(source_coincidence(truth, source, acq), acq.seed)

result = reconstruct(pack_s, pack_l, c12, plan)
step_true = 2 * delta * plan.t_l_ns * 1e-9
print(f"injected delta:        2*pi * {delta / (2 * np.pi) / 1e6:.1f} MHz")
print(f"expected Xi step:      {step_true:.4f} rad (note: just below pi = {np.pi:.4f})")
print(f"measured Xi step:      {result.xi_step_rad:.4f} rad")
print(f"recovered delta:       2*pi * {result.delta_hat / (2 * np.pi) / 1e6:.2f} MHz "
      f"({abs(result.delta_hat - delta) / delta:.2%} off)")
print("\nthe coarse step alone is only known modulo 2*pi; the fine delay")
print("(2*delta*T_s = %.3f rad, unambiguous) selects the branch." % (2 * delta * 1e-9))
