import numpy as np
import pytest

from biphoton_tomo.interferometer import EventStreams, derived_rng, generate_event_streams
from biphoton_tomo.metrics import (
    auto_g2_zero,
    cauchy_schwarz,
    cauchy_schwarz_stderr,
    conditional_g2,
    cross_g2,
    metrics_report,
    phase_rmse,
    waveform_fidelity,
)
from biphoton_tomo.tomography import ReconstructionResult
from biphoton_tomo.waveform import NS_TO_S, make_time_grid, sampled_envelope

from helpers import acquisition, exp_envelope, rabi_envelope, source, std_grid


def poisson_stream(rate, duration, seed):
    rng = derived_rng(seed, "test-poisson")
    n = rng.poisson(rate * duration)
    return np.sort(rng.uniform(0.0, duration, size=n))


def uncorrelated_streams(rate=20e3, duration=50.0, seed=0):
    return EventStreams(
        stokes=poisson_stream(rate, duration, seed * 2 + 1),
        antistokes=poisson_stream(rate, duration, seed * 2 + 2),
        duration=duration,
    )


def pair_streams(pair_rate=1e5, duration=50.0, seed=7, background=200.0, env=None):
    env = env or rabi_envelope()
    return generate_event_streams(
        env, source(pair_rate=pair_rate), acquisition(), background, background, duration, seed
    )


def result_from_envelope(env, phase=None, valid=None):
    """Wrap an envelope as a ReconstructionResult for the score functions."""
    n = env.grid.n_bins
    return ReconstructionResult(
        grid=env.grid,
        amplitude=env.amplitude.copy(),
        phase=env.phase.copy() if phase is None else np.asarray(phase, dtype=float),
        valid=np.ones(n, dtype=bool) if valid is None else valid,
        delta_hat=0.0,
        lambda0_hat=0.0,
        lambda0_stderr=0.0,
        xi_step_rad=0.0,
        islands=[(0, n - 1)],
        tau0_bin=n // 2,
    )


class TestCrossG2:
    def test_uncorrelated_is_unity(self):
        streams = uncorrelated_streams()
        est = cross_g2(streams, std_grid())
        within = np.abs(est.g2 - 1.0) <= 3 * est.stderr
        assert within.mean() >= 0.99
        assert est.g2.mean() == pytest.approx(1.0, abs=0.01)

    def test_pair_peak_at_intensity_maximum(self):
        env = rabi_envelope()
        streams = pair_streams(env=env, background=0.0, duration=20.0)
        est = cross_g2(streams, env.grid)
        peak = int(np.argmax(est.g2))
        assert abs(peak - int(np.argmax(env.amplitude**2))) <= 1
        assert est.g2[peak] > 100

    def test_doubling_duration_halves_variance(self):
        short = cross_g2(uncorrelated_streams(duration=25.0, seed=3), std_grid())
        long = cross_g2(uncorrelated_streams(duration=50.0, seed=4), std_grid())
        ratio = np.mean(short.stderr**2) / np.mean(long.stderr**2)
        assert ratio == pytest.approx(2.0, rel=0.2)

    def test_empty_stream_rejected(self):
        streams = EventStreams(stokes=np.array([]), antistokes=np.array([0.5]), duration=1.0)
        with pytest.raises(ValueError, match="empty"):
            cross_g2(streams, std_grid())


class TestAutoG2Zero:
    def test_poisson_stream_is_unity(self):
        tags = poisson_stream(4e4, 100.0, seed=5)
        est = auto_g2_zero(tags, 100.0, 5e-9, split_seed=1)
        assert abs(est.value - 1.0) <= 3 * est.stderr

    def test_deterministic_split(self):
        tags = poisson_stream(2e4, 20.0, seed=6)
        a = auto_g2_zero(tags, 20.0, 5e-9, split_seed=9)
        b = auto_g2_zero(tags, 20.0, 5e-9, split_seed=9)
        assert a.value == b.value and a.n_coincidences == b.n_coincidences

    def test_merged_pair_stream_is_bunched(self):
        # merging both arms of a pair source and diluting with Poisson
        # background gives a thermal-like mixture; the background rate is
        # tuned so the analytic expectation sits inside (1, 2]
        env = exp_envelope()
        duration, window = 2.0, 100e-9
        streams = pair_streams(pair_rate=2e4, duration=duration, seed=8, background=0.0, env=env)
        merged = np.sort(
            np.concatenate(
                [streams.stokes, streams.antistokes, poisson_stream(2.6e5, duration, seed=28)]
            )
        )
        est = auto_g2_zero(merged, duration, window, split_seed=2)

        n_pairs = streams.stokes.size
        frac = np.sum(env.amplitude**2 * (env.grid.centers <= window / NS_TO_S))
        frac *= env.grid.bin_width * NS_TO_S
        # each close pair lands in opposite virtual detectors with prob. 1/2
        excess = n_pairs * frac * 0.5
        accidental = (merged.size / 2) ** 2 * 2 * window / duration
        expected = 1.0 + excess / accidental
        assert 1.0 < expected <= 2.0
        assert 1.0 < est.value <= 2.0
        assert est.value == pytest.approx(expected, abs=0.15)

    def test_too_few_events(self):
        with pytest.raises(ValueError, match="too few"):
            auto_g2_zero(np.array([0.1]), 1.0, 1e-9, split_seed=0)


class TestCauchySchwarz:
    def test_classical_boundary(self):
        assert cauchy_schwarz(1.0, 1.0, 1.0) == 1.0

    def test_paper_scale_arithmetic(self):
        assert cauchy_schwarz(20.2, 2.0, 2.0) == pytest.approx(102.01)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            cauchy_schwarz(0.0, 1.0, 1.0)

    def test_stderr_propagation(self):
        cs_err = cauchy_schwarz_stderr(10.0, 1.0, 1.0, 0.0, 1.0, 0.0)
        # only the squared numerator contributes: sigma = CS * 2 * 0.1
        assert cs_err == pytest.approx(100.0 * 0.2)

    def test_bright_pairs_violate_classical_bound(self):
        streams = pair_streams(duration=20.0)
        grid = std_grid()
        est = cross_g2(streams, grid)
        peak = float(est.g2.max())
        gss = auto_g2_zero(streams.stokes, streams.duration, 5e-9, split_seed=3)
        gasas = auto_g2_zero(streams.antistokes, streams.duration, 5e-9, split_seed=4)
        assert cauchy_schwarz(peak, gss.value, gasas.value) > 10

    def test_independent_streams_respect_bound_over_seeds(self):
        violations = 0
        for seed in range(50):
            streams = uncorrelated_streams(rate=2e4, duration=10.0, seed=seed)
            est = cross_g2(streams, make_time_grid(-50.0, 50.0, 1.0))
            peak = int(np.argmax(est.g2))
            gss = auto_g2_zero(streams.stokes, streams.duration, 20e-9, split_seed=seed)
            gasas = auto_g2_zero(streams.antistokes, streams.duration, 20e-9, split_seed=seed + 1)
            cs = cauchy_schwarz(float(est.g2[peak]), gss.value, gasas.value)
            cs_err = cauchy_schwarz_stderr(
                float(est.g2[peak]), float(est.stderr[peak]),
                gss.value, gss.stderr, gasas.value, gasas.stderr,
            )
            if cs > 1.0 + 3.0 * cs_err:
                violations += 1
        assert violations <= 1  # >= 98% of seeded trials respect the bound


class TestConditionalG2:
    def test_ideal_pairs_antibunched(self):
        streams = pair_streams(pair_rate=2e4, duration=20.0, background=0.0)
        est = conditional_g2(streams, 200e-9, split_seed=5)
        assert est.value < 0.05

    def test_uncorrelated_streams_poissonian(self):
        streams = uncorrelated_streams(rate=5e4, duration=50.0, seed=11)
        est = conditional_g2(streams, 2000e-9, split_seed=6)
        assert abs(est.value - 1.0) <= 3 * est.stderr

    def test_paper_like_regime_below_half(self):
        streams = pair_streams()
        est = conditional_g2(streams, 200e-9, split_seed=7)
        assert est.value + 3 * est.stderr < 0.5

    def test_monotone_in_pair_rate(self):
        values = []
        for rate in (2e4, 8e4, 3.2e5):
            streams = pair_streams(pair_rate=rate, duration=20.0, background=100.0, seed=19)
            values.append(conditional_g2(streams, 200e-9, split_seed=8).value)
        assert values[0] < values[1] < values[2]

    def test_zero_heralds_rejected(self):
        streams = EventStreams(stokes=np.array([]), antistokes=np.array([0.5]), duration=1.0)
        with pytest.raises(ValueError, match="zero heralds"):
            conditional_g2(streams, 1e-9, split_seed=0)


class TestPhaseRmse:
    def test_identical_is_zero(self):
        env = rabi_envelope()
        assert phase_rmse(result_from_envelope(env), env) == 0.0

    def test_constant_offset_removed(self):
        env = rabi_envelope()
        res = result_from_envelope(env, phase=env.phase + 1.0)
        assert phase_rmse(res, env) == pytest.approx(0.0, abs=1e-9)

    def test_known_noise_level(self):
        env = exp_envelope()
        rng = np.random.default_rng(3)
        res = result_from_envelope(env, phase=env.phase + rng.normal(0, 0.1, env.grid.n_bins))
        assert phase_rmse(res, env) == pytest.approx(0.1, abs=0.02)

    def test_empty_mask_rejected(self):
        env = rabi_envelope()
        res = result_from_envelope(env, valid=np.zeros(env.grid.n_bins, dtype=bool))
        with pytest.raises(ValueError, match="empty mask"):
            phase_rmse(res, env)


class TestWaveformFidelity:
    def test_identical_is_one(self):
        env = rabi_envelope()
        assert waveform_fidelity(env, env) == pytest.approx(1.0, abs=1e-12)
        assert waveform_fidelity(result_from_envelope(env), env) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_supports(self):
        grid = std_grid()
        a = np.zeros(grid.n_bins, dtype=complex)
        b = np.zeros(grid.n_bins, dtype=complex)
        a[grid.bin_index(10.5)] = 1.0
        b[grid.bin_index(20.5)] = 1.0
        assert waveform_fidelity(sampled_envelope(grid, a), sampled_envelope(grid, b)) == 0.0

    def test_unflipped_lobe_costs_its_weight(self):
        # sign-flipping the second lobe reduces the overlap to (1 - 2w)^2
        env = rabi_envelope()
        grid = env.grid
        islands_mask = (grid.centers > 20.0) & (grid.centers < 40.0)
        flipped = env.samples.copy()
        flipped[islands_mask] *= -1.0
        other = sampled_envelope(grid, flipped)
        w = np.sum(env.amplitude[islands_mask] ** 2) / np.sum(env.amplitude**2)
        expected = (1.0 - 2.0 * w) ** 2
        assert waveform_fidelity(env, other) == pytest.approx(expected, abs=1e-9)
        assert waveform_fidelity(env, other) < waveform_fidelity(env, env)

    def test_symmetric_and_phase_invariant(self):
        env = rabi_envelope()
        other = sampled_envelope(env.grid, env.samples * np.exp(1j * 0.77))
        f_ab = waveform_fidelity(env, other)
        f_ba = waveform_fidelity(other, env)
        assert f_ab == pytest.approx(f_ba, abs=1e-12)
        assert f_ab == pytest.approx(1.0, abs=1e-12)

    def test_zero_norm_rejected(self):
        grid = std_grid()
        zero = sampled_envelope(grid, np.zeros(grid.n_bins, dtype=complex))
        with pytest.raises(ValueError, match="zero norm"):
            waveform_fidelity(zero, rabi_envelope())


class TestMetricsReport:
    def test_fields_present(self):
        streams = pair_streams(duration=10.0)
        report = metrics_report(
            streams, std_grid(), auto_window_s=5e-9, heralding_window_s=200e-9, split_seed=1
        )
        for key in ("cs", "cs_err", "gc", "gc_err", "gcross_peak", "gss0", "gasas0",
                    "fidelity", "phase_rmse_rad"):
            assert key in report
        assert report["fidelity"] is None and report["phase_rmse_rad"] is None

    def test_waveform_scores_included_with_truth(self):
        env = rabi_envelope()
        streams = pair_streams(duration=10.0, env=env)
        report = metrics_report(
            streams, env.grid, 5e-9, 200e-9, split_seed=1,
            result=result_from_envelope(env), truth=env,
        )
        assert report["fidelity"] == pytest.approx(1.0, abs=1e-9)
        assert report["phase_rmse_rad"] == pytest.approx(0.0, abs=1e-9)
