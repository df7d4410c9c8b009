"""Nonclassicality and reconstruction-quality metrics.

Correlation estimators work on time-tagged event streams of the source:
normalized cross-correlation g2_(s,as)(tau), zero-delay autocorrelations
via a virtual 50/50 split of a single stream (software intensity
interferometer), the Cauchy-Schwarz figure

    CS = g_cross(peak)^2 / (g_ss(0) * g_asas(0))   (<= 1 classically)

and the heralded conditional autocorrelation g_c (< 0.5 indicates
single-photon character of the heralded arm).  Waveform-level scores
compare a reconstruction against a known envelope: gauge-removed phase
RMSE and the normalized overlap fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angles import circular_mean, wrap_angle
from .interferometer import EventStreams, derived_rng
from .tomography import ReconstructionResult
from .waveform import NS_TO_S, ComplexEnvelope, TimeGrid

__all__ = [
    "CorrelationEstimate",
    "RatioEstimate",
    "cross_g2",
    "auto_g2_zero",
    "cauchy_schwarz",
    "cauchy_schwarz_stderr",
    "conditional_g2",
    "phase_rmse",
    "waveform_fidelity",
    "metrics_report",
]


@dataclass(frozen=True)
class CorrelationEstimate:
    """Per-bin normalized correlation with Poisson standard errors."""

    grid: TimeGrid
    g2: np.ndarray
    stderr: np.ndarray


@dataclass(frozen=True)
class RatioEstimate:
    """Scalar correlation ratio with its standard error."""

    value: float
    stderr: float
    n_coincidences: int


def _pair_differences(reference: np.ndarray, other: np.ndarray, lo_s: float, hi_s: float):
    """All (other - reference) differences falling in [lo_s, hi_s), vectorized."""
    lo = np.searchsorted(other, reference + lo_s)
    hi = np.searchsorted(other, reference + hi_s)
    per_ref = hi - lo
    total = int(per_ref.sum())
    if total == 0:
        return np.empty(0)
    cum = np.cumsum(per_ref)
    flat = np.arange(total) - np.repeat(cum - per_ref, per_ref) + np.repeat(lo, per_ref)
    return other[flat] - np.repeat(reference, per_ref)


def cross_g2(streams: EventStreams, grid: TimeGrid) -> CorrelationEstimate:
    """Normalized cross-correlation between the two streams over the grid.

    g2[k] = N_coinc(tau_k) * duration / (N_s * N_as * dtau): the coincidence
    histogram divided by the accidental rate implied by the singles rates.
    Standard errors are Poisson on the per-bin coincidence counts
    (regularized to at least one count).
    """
    if streams.stokes.size == 0 or streams.antistokes.size == 0:
        raise ValueError("cross_g2: empty stream")
    lo_s = grid.tau_min * NS_TO_S
    hi_s = grid.tau_max * NS_TO_S
    diffs = _pair_differences(streams.stokes, streams.antistokes, lo_s, hi_s)
    edges = (grid.tau_min + np.arange(grid.n_bins + 1) * grid.bin_width) * NS_TO_S
    counts, _ = np.histogram(diffs, bins=edges)
    norm = streams.duration / (
        streams.stokes.size * streams.antistokes.size * grid.bin_width * NS_TO_S
    )
    g2 = counts * norm
    stderr = np.sqrt(np.maximum(counts, 1)) * norm
    return CorrelationEstimate(grid=grid, g2=g2, stderr=stderr)


def auto_g2_zero(tags: np.ndarray, duration: float, window_s: float, split_seed: int) -> RatioEstimate:
    """Zero-delay autocorrelation of one stream via a virtual 50/50 split.

    The stream is split pseudo-randomly (deterministic under split_seed)
    into two virtual detectors; coincidences within +-window_s of zero
    delay are normalized by the accidental expectation
    N1 * N2 * 2*window / duration.
    """
    tags = np.asarray(tags, dtype=float)
    if tags.size < 2:
        raise ValueError("auto_g2_zero: too few events")
    rng = derived_rng(split_seed, "virtual-split", tags.size)
    first = rng.random(tags.size) < 0.5
    half1 = tags[first]
    half2 = tags[~first]
    if half1.size == 0 or half2.size == 0:
        raise ValueError("auto_g2_zero: too few events after split")
    n_coinc = _pair_differences(half1, half2, -window_s, window_s).size
    accidental = half1.size * half2.size * 2.0 * window_s / duration
    value = n_coinc / accidental
    stderr = np.sqrt(max(n_coinc, 1)) / accidental
    return RatioEstimate(value=float(value), stderr=float(stderr), n_coincidences=int(n_coinc))


def cauchy_schwarz(gcross_peak: float, gss0: float, gasas0: float) -> float:
    """CS = gcross^2 / (gss * gasas); classical sources satisfy CS <= 1."""
    if gcross_peak <= 0 or gss0 <= 0 or gasas0 <= 0:
        raise ValueError("cauchy_schwarz: inputs must be positive")
    return gcross_peak**2 / (gss0 * gasas0)


def cauchy_schwarz_stderr(
    gcross_peak: float,
    gcross_err: float,
    gss0: float,
    gss_err: float,
    gasas0: float,
    gasas_err: float,
) -> float:
    """First-order error propagation for the CS figure."""
    cs = cauchy_schwarz(gcross_peak, gss0, gasas0)
    rel = np.sqrt(
        (2.0 * gcross_err / gcross_peak) ** 2
        + (gss_err / gss0) ** 2
        + (gasas_err / gasas0) ** 2
    )
    return float(cs * rel)


def conditional_g2(streams: EventStreams, heralding_window_s: float, split_seed: int) -> RatioEstimate:
    """Heralded autocorrelation of the anti-Stokes arm.

    Stokes tags herald; the anti-Stokes stream is split virtually into two
    arms B and C.  Over the window (t, t + W] after each herald,

        g_c = N_H * N_BC / (N_B * N_C)

    with N_B, N_C the heralds seeing at least one click in the respective
    arm and N_BC the heralds seeing both.  The error is binomial in the
    three per-herald probabilities (cross-correlations neglected).
    """
    if heralding_window_s <= 0:
        raise ValueError("conditional_g2: heralding window must be positive")
    heralds = streams.stokes
    if heralds.size == 0:
        raise ValueError("conditional_g2: zero heralds")
    rng = derived_rng(split_seed, "herald-split", streams.antistokes.size)
    to_b = rng.random(streams.antistokes.size) < 0.5
    arm_b = streams.antistokes[to_b]
    arm_c = streams.antistokes[~to_b]

    def saw_click(arm):
        lo = np.searchsorted(arm, heralds, side="right")
        hi = np.searchsorted(arm, heralds + heralding_window_s, side="right")
        return hi > lo

    b_hit = saw_click(arm_b)
    c_hit = saw_click(arm_c)
    n_h = heralds.size
    n_b = int(np.sum(b_hit))
    n_c = int(np.sum(c_hit))
    n_bc = int(np.sum(b_hit & c_hit))
    if n_b == 0 or n_c == 0:
        raise ValueError("conditional_g2: no heralded clicks in one arm")
    value = n_h * n_bc / (n_b * n_c)

    def binom_rel(k):
        k_eff = max(k, 1)
        p = k_eff / n_h
        return (1.0 - p) / (n_h * p)

    rel_var = binom_rel(n_bc) + binom_rel(n_b) + binom_rel(n_c)
    scale = value if value > 0 else n_h / (n_b * n_c)
    return RatioEstimate(
        value=float(value), stderr=float(scale * np.sqrt(rel_var)), n_coincidences=n_bc
    )


def _samples_and_valid(obj):
    if isinstance(obj, ComplexEnvelope):
        return obj.samples, np.ones(obj.grid.n_bins, dtype=bool), obj.grid
    if isinstance(obj, ReconstructionResult):
        phase = np.where(obj.valid, np.nan_to_num(obj.phase), 0.0)
        return obj.amplitude * np.exp(1j * phase), obj.valid.copy(), obj.grid
    raise TypeError(f"expected ComplexEnvelope or ReconstructionResult, got {type(obj)}")


def phase_rmse(
    result: ReconstructionResult, truth: ComplexEnvelope, mask_threshold: float = 0.1
) -> float:
    """Gauge-removed RMS phase error against a known envelope.

    Restricted to bins where the true intensity is at least mask_threshold
    of its peak and the reconstruction is valid.  The single free constant
    (the reference-phase gauge) is removed as a circular mean before the
    wrapped residuals are squared.
    """
    if not result.grid.same_lattice(truth.grid):
        raise ValueError("phase_rmse: result and truth on different grids")
    a2 = truth.amplitude**2
    mask = (a2 >= mask_threshold * a2.max()) & result.valid
    if not np.any(mask):
        raise ValueError("phase_rmse: empty mask")
    diff = result.phase[mask] - truth.phase[mask]
    offset, _ = circular_mean(diff)
    residuals = wrap_angle(diff - offset)
    return float(np.sqrt(np.mean(residuals**2)))


def waveform_fidelity(a, b) -> float:
    """Normalized squared overlap of two waveforms on their common valid bins.

    |sum(conj(psi_a) psi_b dtau)|^2 / (||psi_a||^2 ||psi_b||^2); symmetric
    in its arguments and invariant under a global phase of either one.
    Accepts envelopes or reconstruction results.
    """
    sa, va, grid_a = _samples_and_valid(a)
    sb, vb, grid_b = _samples_and_valid(b)
    if not grid_a.same_lattice(grid_b):
        raise ValueError("waveform_fidelity: grids differ")
    mask = va & vb
    dt = grid_a.bin_width * NS_TO_S
    norm_a = np.sum(np.abs(sa[mask]) ** 2) * dt
    norm_b = np.sum(np.abs(sb[mask]) ** 2) * dt
    if norm_a <= 0 or norm_b <= 0:
        raise ValueError("waveform_fidelity: zero norm on the valid bins")
    overlap = np.sum(np.conj(sa[mask]) * sb[mask]) * dt
    return float(np.abs(overlap) ** 2 / (norm_a * norm_b))


def metrics_report(
    streams: EventStreams,
    grid: TimeGrid,
    auto_window_s: float,
    heralding_window_s: float,
    split_seed: int,
    result: ReconstructionResult | None = None,
    truth: ComplexEnvelope | None = None,
    mask_threshold: float = 0.1,
) -> dict:
    """Assemble the metrics JSON payload from one event record.

    Waveform scores (fidelity, phase RMSE) are included when both a
    reconstruction and a ground-truth envelope are supplied, else null.
    """
    cross = cross_g2(streams, grid)
    peak_idx = int(np.argmax(cross.g2))
    gcross_peak = float(cross.g2[peak_idx])
    gcross_err = float(cross.stderr[peak_idx])
    gss = auto_g2_zero(streams.stokes, streams.duration, auto_window_s, split_seed)
    gasas = auto_g2_zero(streams.antistokes, streams.duration, auto_window_s, split_seed + 1)
    cs = cauchy_schwarz(gcross_peak, gss.value, gasas.value)
    cs_err = cauchy_schwarz_stderr(
        gcross_peak, gcross_err, gss.value, gss.stderr, gasas.value, gasas.stderr
    )
    gc = conditional_g2(streams, heralding_window_s, split_seed)
    report = {
        "cs": cs,
        "cs_err": cs_err,
        "gc": gc.value,
        "gc_err": gc.stderr,
        "gcross_peak": gcross_peak,
        "gss0": gss.value,
        "gasas0": gasas.value,
        "fidelity": None,
        "phase_rmse_rad": None,
    }
    if result is not None and truth is not None:
        report["fidelity"] = waveform_fidelity(result, truth)
        report["phase_rmse_rad"] = phase_rmse(result, truth, mask_threshold)
    return report
