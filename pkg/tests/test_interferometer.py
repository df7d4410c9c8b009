import numpy as np
import pytest
from scipy import stats

from biphoton_tomo.interferometer import (
    AcquisitionConfig,
    CoincidenceHistogram,
    ProjectorSetting,
    SIX_SETTINGS,
    expected_histogram,
    generate_event_streams,
    joint_amplitude,
    read_events_csv,
    read_histogram_csv,
    sample_histogram,
    source_coincidence,
    write_events_csv,
    write_histogram_csv,
)
from biphoton_tomo.waveform import NS_TO_S, envelope_at, make_time_grid, sampled_envelope

from helpers import (
    DELTA_43MHZ,
    acquisition,
    assert_close_histogram,
    exp_envelope,
    oracle_expected_counts,
    oracle_joint_amplitude,
    rabi_envelope,
    source,
    std_grid,
)

P = ProjectorSetting.named


class TestProjectorSetting:
    def test_table_values(self):
        assert P("H").alpha == 0 and P("H").theta == 0
        assert P("V").alpha == pytest.approx(np.pi / 2)
        assert P("R").theta == pytest.approx(np.pi / 2)
        assert P("L").theta == pytest.approx(-np.pi / 2)

    def test_mismatched_angles_rejected(self):
        with pytest.raises(ValueError, match="does not match"):
            ProjectorSetting(alpha=0.1, theta=0.0, label="H")


class TestJointAmplitude:
    def test_hv_keeps_first_bracket_only(self):
        env = rabi_envelope()
        delta, t, tau = DELTA_43MHZ, 5.0, 12.5
        value = joint_amplitude(env, delta, P("H"), P("V"), t, tau)
        b1 = (
            np.exp(-1j * delta * (tau - t) * NS_TO_S) * envelope_at(env, tau - t)
            + envelope_at(env, t - tau)
        )
        assert value == pytest.approx(0.5 * b1, rel=1e-12)

    def test_vh_keeps_second_bracket_only(self):
        env = rabi_envelope()
        delta, t, tau = DELTA_43MHZ, 5.0, 12.5
        value = joint_amplitude(env, delta, P("V"), P("H"), t, tau)
        b2 = (
            np.exp(1j * delta * t * NS_TO_S) * envelope_at(env, -tau - t)
            + np.exp(-1j * delta * tau * NS_TO_S) * envelope_at(env, tau + t)
        )
        assert value == pytest.approx(-0.5 * b2, rel=1e-12)

    def test_dd_cancels_at_zero_delay_zero_delta(self):
        # both brackets reduce to psi(tau) - psi(tau): exact cancellation
        env = exp_envelope()
        value = joint_amplitude(env, 0.0, P("D"), P("D"), 0.0, 5.0)
        assert value == 0
        assert value == oracle_joint_amplitude(env, 0.0, "D", "D", 0.0, 5.0)

    def test_negative_delay_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            joint_amplitude(rabi_envelope(), 0.0, P("H"), P("V"), -1.0, 0.0)

    def test_matches_scalar_oracle_everywhere(self):
        env = rabi_envelope()
        for tau in (-30.5, -3.5, 0.5, 3.5, 30.5):
            for l3, l4 in SIX_SETTINGS:
                got = joint_amplitude(env, DELTA_43MHZ, P(l3), P(l4), 5.8, tau, 0.2)
                want = oracle_joint_amplitude(env, DELTA_43MHZ, l3, l4, 5.8, tau, 0.2)
                assert got == pytest.approx(want, abs=1e-15 + 1e-12 * abs(want))


class TestExpectedHistogram:
    def test_count_law_scale(self):
        # single occupied bin with |psi|^2 = 1e9 1/s: G2 = 4e3 * 0.25e9 = 1e12,
        # so C = G2 * eta * dt * t_m = 1e12 * 0.1 * 1e-9 * 100 = 1e4
        grid = make_time_grid(-5.0, 5.0, 1.0)
        values = np.zeros(grid.n_bins, dtype=complex)
        k = grid.bin_index(0.5)
        values[k] = np.sqrt(1.0 / (grid.bin_width * NS_TO_S))
        env = sampled_envelope(grid, values)
        src = source(delta=0.0, pair_rate=4e3)
        acq = AcquisitionConfig(eta=0.1, bin_width=1e-9, measure_time=100.0)
        hist = expected_histogram(env, src, P("H"), P("V"), 0.0, acq)
        assert hist.values[k] == pytest.approx(1e4, rel=1e-12)

    def test_hh_setting_is_dark(self):
        env = rabi_envelope()
        hist = expected_histogram(env, source(), P("H"), P("H"), 1.0, acquisition())
        assert np.all(hist.values == 0)

    def test_matches_per_bin_oracle(self):
        env = rabi_envelope()
        src = source(delta=DELTA_43MHZ)
        acq = acquisition(background=0.7)
        for t_ns in (1.0, 5.8):
            for l3, l4 in SIX_SETTINGS:
                hist = expected_histogram(env, src, P(l3), P(l4), t_ns, acq, residual_phase=0.3)
                oracle = oracle_expected_counts(env, src, l3, l4, t_ns, acq, residual_phase=0.3)
                assert_close_histogram(hist.values, oracle)

    def test_counts_scale_linearly(self):
        env = exp_envelope()
        base = expected_histogram(env, source(pair_rate=1e4), P("D"), P("A"), 1.0, acquisition())
        double_rate = expected_histogram(
            env, source(pair_rate=2e4), P("D"), P("A"), 1.0, acquisition()
        )
        double_time = expected_histogram(
            env, source(pair_rate=1e4), P("D"), P("A"), 1.0, acquisition(measure_time=40.0)
        )
        double_eta = expected_histogram(
            env, source(pair_rate=1e4), P("D"), P("A"), 1.0, acquisition(eta=0.6)
        )
        for scaled in (double_rate, double_time, double_eta):
            np.testing.assert_allclose(scaled.values, 2 * base.values, rtol=1e-12)

    def test_count_sum_identities(self):
        # DD+DA and DR+DL each equal half of HV+VH, bin by bin
        rng = np.random.default_rng(5)
        grid = std_grid()
        raw = np.where(
            grid.centers > 0, rng.normal(size=grid.n_bins) + 1j * rng.normal(size=grid.n_bins), 0
        )
        envelopes = [rabi_envelope(), exp_envelope(), sampled_envelope(grid, raw)]
        for env in envelopes:
            for delta in (0.0, DELTA_43MHZ):
                src = source(delta=delta)
                acq = acquisition()
                h = {
                    (l3, l4): expected_histogram(
                        env, src, P(l3), P(l4), 5.8, acq, residual_phase=0.4
                    ).values
                    for l3, l4 in SIX_SETTINGS
                }
                half = 0.5 * (h[("H", "V")] + h[("V", "H")])
                assert_close_histogram(h[("D", "D")] + h[("D", "A")], half)
                assert_close_histogram(h[("D", "R")] + h[("D", "L")], half)


class TestSampleHistogram:
    def test_zero_mean_bins_stay_zero(self):
        env = rabi_envelope()
        hist = expected_histogram(env, source(), P("H"), P("V"), 1.0, acquisition())
        sampled = sample_histogram(hist, seed=3)
        assert np.all(sampled.values[hist.values == 0] == 0)

    def test_deterministic_under_seed(self):
        env = rabi_envelope()
        hist = expected_histogram(env, source(), P("D"), P("R"), 5.8, acquisition())
        a = sample_histogram(hist, seed=11)
        b = sample_histogram(hist, seed=11)
        np.testing.assert_array_equal(a.values, b.values)
        c = sample_histogram(hist, seed=12)
        assert np.any(c.values != a.values)

    def test_substream_depends_on_setting_and_delay(self):
        env = rabi_envelope()
        h1 = expected_histogram(env, source(), P("D"), P("R"), 5.8, acquisition())
        h2 = expected_histogram(env, source(), P("D"), P("L"), 5.8, acquisition())
        a = sample_histogram(h1, seed=11)
        b = sample_histogram(h2, seed=11)
        assert np.any(a.values != b.values)

    def test_poisson_mean(self):
        # 1000 bins of mean 1e4: sample mean within 3 sigma = 3*100/sqrt(1000)
        grid = make_time_grid(0.0, 1000.0, 1.0)
        hist = CoincidenceHistogram(
            grid=grid,
            delay_ns=0.0,
            setting3=P("H"),
            setting4=P("V"),
            values=np.full(grid.n_bins, 1e4),
            kind="expected",
        )
        sampled = sample_histogram(hist, seed=21)
        assert sampled.values.mean() == pytest.approx(1e4, abs=3 * 100 / np.sqrt(1000))

    def test_requires_expected_kind(self):
        env = rabi_envelope()
        hist = expected_histogram(env, source(), P("H"), P("V"), 1.0, acquisition())
        sampled = sample_histogram(hist, seed=3)
        with pytest.raises(ValueError, match="expected-kind"):
            sample_histogram(sampled, seed=3)


class TestSourceCoincidence:
    def test_even_in_tau(self):
        hist = source_coincidence(rabi_envelope(), source(), acquisition(background=0.2))
        np.testing.assert_allclose(hist.values, hist.values[::-1], rtol=1e-12)

    def test_positive_wing_is_intensity(self):
        env = rabi_envelope()
        src, acq = source(), acquisition()
        hist = source_coincidence(env, src, acq)
        scale = src.pair_rate * acq.eta * acq.bin_width * acq.measure_time
        pos = env.grid.centers > 0
        np.testing.assert_allclose(
            hist.values[pos], env.amplitude[pos] ** 2 * scale, rtol=1e-12
        )

    def test_peak_matches_envelope_peak(self):
        env = rabi_envelope()
        hist = source_coincidence(env, source(), acquisition())
        assert np.argmax(hist.values * (env.grid.centers > 0)) == np.argmax(env.amplitude**2)


class TestEventStreams:
    def test_zero_rates_empty(self):
        streams = generate_event_streams(
            rabi_envelope(), source(pair_rate=0.0), acquisition(), 0.0, 0.0, 1.0, seed=5
        )
        assert streams.stokes.size == 0 and streams.antistokes.size == 0

    def test_causality_every_antistokes_has_earlier_partner(self):
        env = rabi_envelope()
        streams = generate_event_streams(
            env, source(pair_rate=2e3), acquisition(), 0.0, 0.0, 10.0, seed=5
        )
        assert streams.antistokes.size > 0
        window = env.grid.tau_max * NS_TO_S
        lo = np.searchsorted(streams.stokes, streams.antistokes - window)
        hi = np.searchsorted(streams.stokes, streams.antistokes, side="left")
        assert np.all(hi > lo)

    def test_deterministic_under_seed(self):
        env = exp_envelope()
        a = generate_event_streams(env, source(), acquisition(), 100.0, 50.0, 2.0, seed=9)
        b = generate_event_streams(env, source(), acquisition(), 100.0, 50.0, 2.0, seed=9)
        np.testing.assert_array_equal(a.stokes, b.stokes)
        np.testing.assert_array_equal(a.antistokes, b.antistokes)

    def test_pair_delay_distribution_chi_square(self):
        # low rate so the partner of each anti-Stokes tag is the nearest
        # preceding Stokes tag; histogram of delays against the |psi|^2 law
        env = rabi_envelope()
        src = source(pair_rate=400.0)
        acq = acquisition(eta=1.0)
        duration = 250.0  # ~1e5 pairs, mean spacing 2.5 ms >> 200 ns waveform
        streams = generate_event_streams(env, src, acq, 0.0, 0.0, duration, seed=13)
        idx = np.searchsorted(streams.stokes, streams.antistokes, side="left") - 1
        delays = (streams.antistokes - streams.stokes[idx]) / NS_TO_S
        grid = env.grid
        edges = grid.tau_min + np.arange(grid.n_bins + 1) * grid.bin_width
        counts, _ = np.histogram(delays, bins=edges)
        prob = env.amplitude**2 * grid.bin_width * NS_TO_S
        keep = prob > 20 / delays.size  # expected count floor for chi-square validity
        expected = prob[keep] / prob[keep].sum() * counts[keep].sum()
        chi2 = stats.chisquare(counts[keep], expected)
        assert chi2.pvalue > 1e-3


class TestCsvRoundTrips:
    def test_expected_histogram(self, tmp_path):
        env = rabi_envelope()
        hist = expected_histogram(env, source(), P("D"), P("L"), 5.8, acquisition())
        path = tmp_path / "h.csv"
        write_histogram_csv(hist, path)
        back = read_histogram_csv(path)
        assert back.labels == ("D", "L")
        assert back.kind == "expected"
        assert back.delay_ns == 5.8
        assert back.grid.same_lattice(hist.grid)
        np.testing.assert_allclose(back.values, hist.values, rtol=1e-10)

    def test_sampled_histogram_integers(self, tmp_path):
        env = rabi_envelope()
        hist = sample_histogram(
            expected_histogram(env, source(), P("D"), P("L"), 5.8, acquisition()), seed=2
        )
        path = tmp_path / "h.csv"
        write_histogram_csv(hist, path)
        back = read_histogram_csv(path)
        assert back.kind == "sampled"
        np.testing.assert_array_equal(back.values, hist.values)

    def test_source_histogram_labels(self, tmp_path):
        hist = source_coincidence(rabi_envelope(), source(), acquisition())
        path = tmp_path / "c12.csv"
        write_histogram_csv(hist, path)
        back = read_histogram_csv(path)
        assert back.setting3 is None and back.setting4 is None

    def test_events(self, tmp_path):
        streams = generate_event_streams(
            exp_envelope(), source(), acquisition(), 100.0, 50.0, 1.0, seed=9
        )
        path = tmp_path / "events.csv"
        write_events_csv(streams, path)
        back = read_events_csv(path)
        assert back.duration == streams.duration
        np.testing.assert_allclose(back.stokes, streams.stokes, rtol=1e-10)
        np.testing.assert_allclose(back.antistokes, streams.antistokes, rtol=1e-10)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("tau_ns,counts\n0.5,1\n1.5,2\n")
        with pytest.raises(ValueError, match="T_ns"):
            read_histogram_csv(path)
