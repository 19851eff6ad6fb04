import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from uwbcal.errors import (CsvFormatError, DegenerateFit, InsufficientData,
                           InvalidTiming)
from uwbcal.ranging import (SPEED_OF_LIGHT, RangingModel, RangingSample,
                            TwrTimings, correct_measurement, ds_twr_distance,
                            fit_model, load_reference_samples, load_samples,
                            reference_model, save_samples,
                            simulate_measurement, ss_twr_distance)

C = SPEED_OF_LIGHT


class TestTimings:
    def test_zero_flight_allowed(self):
        t = TwrTimings(t_round=1e-3, t_reply=1e-3)
        assert ss_twr_distance(t) == 0.0

    def test_round_before_reply_rejected(self):
        with pytest.raises(InvalidTiming):
            TwrTimings(t_round=1e-3, t_reply=2e-3)

    def test_negative_reply_rejected(self):
        with pytest.raises(InvalidTiming):
            TwrTimings(t_round=1e-3, t_reply=-1e-6)

    def test_half_second_pair_rejected(self):
        with pytest.raises(InvalidTiming):
            TwrTimings(t_round=1e-3, t_reply=0.0, t_round2=1e-3)


class TestSsTwr:
    def test_unit_inversion(self):
        assert ss_twr_distance(TwrTimings(2.0 / C, 0.0)) == 1.0

    def test_ten_meter_flight(self):
        t = TwrTimings(t_round=1e-3 + 66.71282e-9, t_reply=1e-3)
        assert ss_twr_distance(t) == pytest.approx(10.0, abs=1e-5)
        # direct inversion of d = c*dt/2 for d = 10 m
        assert ss_twr_distance(TwrTimings(20.0 / C, 0.0)) == pytest.approx(
            10.0, rel=1e-15)

    @given(st.floats(min_value=0, max_value=1e-6),
           st.floats(min_value=0, max_value=1e-3))
    def test_linear_in_net_round_trip(self, dt, reply):
        d = ss_twr_distance(TwrTimings(reply + dt, reply))
        d2 = ss_twr_distance(TwrTimings(reply + 2 * dt, reply))
        assert d2 == pytest.approx(2 * d, rel=1e-9, abs=1e-9)


class TestDsTwr:
    def test_symmetric_identity(self):
        tof = 33.356e-9
        reply = 480e-6
        t = TwrTimings(t_round=2 * tof + reply, t_reply=reply,
                       t_round2=2 * tof + reply, t_reply2=reply)
        assert ds_twr_distance(t) == pytest.approx(C * tof, rel=1e-9)
        assert ds_twr_distance(t) == pytest.approx(10.0, abs=1e-3)

    def test_zero_flight(self):
        t = TwrTimings(1e-3, 1e-3, 1e-3, 1e-3)
        assert ds_twr_distance(t) == 0.0

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(7)
        with mpmath.workdps(50):
            for _ in range(50):
                reply1, reply2 = rng.uniform(1e-4, 1e-3, 2)
                tof = rng.uniform(1e-9, 1e-6)
                skew = rng.uniform(0.5, 2.0)  # asymmetric exchanges
                t = TwrTimings(t_round=2 * tof + reply1, t_reply=reply1,
                               t_round2=2 * tof * skew + reply2,
                               t_reply2=reply2)
                r1, p1 = mpmath.mpf(t.t_round), mpmath.mpf(t.t_reply)
                r2, p2 = mpmath.mpf(t.t_round2), mpmath.mpf(t.t_reply2)
                expected = mpmath.mpf(C) * (r1 * r2 - p1 * p2) / (r1 + r2 + p1 + p2)
                assert ds_twr_distance(t) == pytest.approx(float(expected),
                                                           rel=1e-12)

    def test_reduces_to_ss_when_symmetric(self):
        reply = 250e-6
        tof = 50e-9
        ss = ss_twr_distance(TwrTimings(2 * tof + reply, reply))
        ds = ds_twr_distance(TwrTimings(2 * tof + reply, reply,
                                        2 * tof + reply, reply))
        assert ds == pytest.approx(ss, rel=1e-9)

    def test_missing_second_pair(self):
        with pytest.raises(InvalidTiming):
            ds_twr_distance(TwrTimings(1e-3, 0.0))


class TestFitModel:
    def test_exact_identity_line(self):
        samples = [RangingSample(d, d) for d in (1.0, 2.0, 5.0, 9.0)]
        m = fit_model(samples)
        assert m.slope == pytest.approx(1.0, rel=1e-12)
        assert m.intercept == pytest.approx(0.0, abs=1e-12)
        assert m.noise_std == pytest.approx(0.0, abs=1e-12)

    def test_recovers_known_line(self):
        rng = np.random.default_rng(3)
        xs = rng.uniform(0.5, 30, 25)
        samples = [RangingSample(x, 1.37 * x + 0.21) for x in xs]
        m = fit_model(samples)
        assert m.slope == pytest.approx(1.37, rel=1e-12)
        assert m.intercept == pytest.approx(0.21, rel=1e-9)

    def test_residuals_sum_to_zero(self):
        rng = np.random.default_rng(4)
        samples = [RangingSample(x, 1.1 * x + 0.3 + rng.normal(0, 0.05))
                   for x in rng.uniform(1, 20, 30)]
        m = fit_model(samples)
        resid = [s.measured_distance - (m.slope * s.true_distance + m.intercept)
                 for s in samples]
        assert sum(resid) == pytest.approx(0.0, abs=1e-9)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientData):
            fit_model([RangingSample(1.0, 1.1)])

    def test_degenerate_fit(self):
        with pytest.raises(DegenerateFit):
            fit_model([RangingSample(2.0, 2.1), RangingSample(2.0, 2.3)])

    def test_reference_sweep_fit(self):
        samples = load_reference_samples()
        assert len(samples) == 40
        m = fit_model(samples)
        # independent oracle: numpy polyfit (SVD-based) on the same data
        xs = np.array([s.true_distance for s in samples])
        ys = np.array([s.measured_distance for s in samples])
        slope_ref, intercept_ref = np.polyfit(xs, ys, 1)
        assert m.slope == pytest.approx(slope_ref, rel=1e-10)
        assert m.intercept == pytest.approx(intercept_ref, rel=1e-10)
        resid = ys - (slope_ref * xs + intercept_ref)
        noise_ref = math.sqrt(float(resid @ resid) / (len(xs) - 2))
        assert m.noise_std == pytest.approx(noise_ref, rel=1e-10)
        # frozen values computed with the oracle above
        assert m.slope == pytest.approx(1.008627111, abs=1e-8)
        assert m.intercept == pytest.approx(0.361133156, abs=1e-8)
        assert m.noise_std == pytest.approx(0.058461523, abs=1e-8)
        assert 0.04 < m.noise_std < 0.08


class TestSimulateAndCorrect:
    def test_zero_noise_line_value(self):
        m = reference_model()
        rng = np.random.default_rng(0)
        noiseless = RangingModel(m.slope, m.intercept, 0.0, m.n_samples)
        got = simulate_measurement(10.0, noiseless, rng)
        assert got == pytest.approx(m.slope * 10.0 + m.intercept, rel=1e-15)
        assert got == pytest.approx(10.4474456, abs=1e-3)

    def test_identity_model_is_identity(self):
        rng = np.random.default_rng(0)
        assert simulate_measurement(7.25, RangingModel.identity(), rng) == 7.25

    def test_law_of_large_numbers(self):
        m = reference_model()
        rng = np.random.default_rng(11)
        draws = [simulate_measurement(5.0, m, rng) for _ in range(10_000)]
        predicted = m.slope * 5.0 + m.intercept
        assert abs(np.mean(draws) - predicted) < 3 * m.noise_std / 100

    def test_noise_level_does_not_shift_draw_order(self):
        m = reference_model()
        quiet = RangingModel(m.slope, m.intercept, 0.0, m.n_samples)
        rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
        simulate_measurement(5.0, m, rng_a)
        simulate_measurement(5.0, quiet, rng_b)
        assert rng_a.standard_normal() == rng_b.standard_normal()

    @given(st.floats(min_value=0.1, max_value=100),
           st.floats(min_value=0.5, max_value=2.0),
           st.floats(min_value=-0.5, max_value=2.0))
    def test_correct_inverts_simulate_at_zero_noise(self, d, slope, intercept):
        m = RangingModel(slope, intercept, 0.0, 2)
        rng = np.random.default_rng(0)
        assert correct_measurement(simulate_measurement(d, m, rng), m) == \
            pytest.approx(d, rel=1e-12)

    def test_corrects_reference_line_point(self):
        m = reference_model()
        assert correct_measurement(10.4474456, m) == pytest.approx(10.0,
                                                                   abs=1e-3)

    def test_identity_correction(self):
        assert correct_measurement(3.14, RangingModel.identity()) == 3.14

    def test_non_positive_distance_rejected(self):
        with pytest.raises(ValueError):
            simulate_measurement(0.0, RangingModel.identity(),
                                 np.random.default_rng(0))


class TestModelValidation:
    def test_bad_fields(self):
        with pytest.raises(ValueError):
            RangingModel(slope=0.0, intercept=0.0, noise_std=0.0, n_samples=2)
        with pytest.raises(ValueError):
            RangingModel(slope=1.0, intercept=0.0, noise_std=-0.1, n_samples=2)
        with pytest.raises(ValueError):
            RangingModel(slope=1.0, intercept=0.0, noise_std=0.0, n_samples=1)

    def test_dict_round_trip(self):
        m = reference_model()
        assert RangingModel.from_dict(m.to_dict()) == m

    def test_sample_validation(self):
        with pytest.raises(ValueError):
            RangingSample(0.0, 1.0)
        with pytest.raises(ValueError):
            RangingSample(1.0, -1.0)


class TestSampleCsv:
    def test_round_trip(self, tmp_path):
        samples = [RangingSample(1.5, 1.8), RangingSample(2.5, 2.9)]
        path = tmp_path / "samples.csv"
        save_samples(samples, path)
        assert load_samples(path) == samples

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(CsvFormatError) as err:
            load_samples(path)
        assert err.value.line == 1

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("true_m,measured_m\n1.0,1.2\nx,2\n")
        with pytest.raises(CsvFormatError) as err:
            load_samples(path)
        assert err.value.line == 3
