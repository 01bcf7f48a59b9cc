import math

import numpy as np
import pytest
from scipy.special import erf

from franson_lab import analysis, qstate


def finite_difference_jacobian(model, t, params, eps=1e-7):
    jac = np.empty((len(t), len(params)))
    for k in range(len(params)):
        hi = np.array(params, dtype=float)
        lo = hi.copy()
        hi[k] += eps
        lo[k] -= eps
        jac[:, k] = (model(t, *hi) - model(t, *lo)) / (2 * eps)
    return jac


class TestGaussianFit:
    def test_noiseless_recovery(self):
        t = np.linspace(100, 340, 49)
        y = analysis.gaussian_model(t, 100.0, 220.0, 21.0)
        fit = analysis.fit_gaussian_peak(t, y)
        assert fit.amplitude == pytest.approx(100.0, rel=1e-6)
        assert fit.mean == pytest.approx(220.0, rel=1e-6)
        assert fit.sigma == pytest.approx(21.0, rel=1e-6)

    def test_integral_closed_form(self):
        t = np.linspace(0, 400, 81)
        y = analysis.gaussian_model(t, 340.0, 190.0, 33.0)
        fit = analysis.fit_gaussian_peak(t, y)
        exact = 340.0 * 33.0 * math.sqrt(2 * math.pi) * erf(5 / math.sqrt(2))
        assert fit.integral_5sigma == pytest.approx(exact, rel=1e-6)

    def test_poisson_noise_within_three_sigma(self):
        rng = np.random.default_rng(42)
        t = np.linspace(100, 340, 49)
        truth = analysis.gaussian_model(t, 1000.0, 220.0, 21.0)
        pulls = []
        for _ in range(50):
            fit = analysis.fit_gaussian_peak(t, rng.poisson(truth))
            err = math.sqrt(max(fit.covariance[1, 1], 1e-12))
            pulls.append((fit.mean - 220.0) / err)
        pulls = np.array(pulls)
        # mean pull consistent with zero at 3 sigma of the ensemble
        assert abs(pulls.mean()) < 3 / math.sqrt(len(pulls)) + 0.6
        assert np.percentile(np.abs(pulls), 90) < 3.0

    def test_flat_data_rejected(self):
        with pytest.raises(analysis.FitError):
            analysis.fit_gaussian_peak(np.arange(10.0), np.full(10, 7.0))

    def test_too_few_samples_rejected(self):
        with pytest.raises(analysis.FitError):
            analysis.fit_gaussian_peak([0, 1, 2], [1, 5, 1])

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        t = np.linspace(-5, 5, 40)
        for _ in range(5):
            params = [rng.uniform(50, 200), rng.uniform(-2, 2), rng.uniform(0.5, 3)]
            jac = analysis.gaussian_jacobian(t, *params)
            num = finite_difference_jacobian(analysis.gaussian_model, t, params)
            assert np.max(np.abs(jac - num)) / np.max(np.abs(num)) < 1e-5


class TestFringeFit:
    def test_four_exact_points(self):
        phi = np.array([0, math.pi / 2, math.pi, 3 * math.pi / 2])
        y = 50.0 * (1 + np.cos(phi))
        fit = analysis.fit_fringe(phi, y)
        assert fit.visibility == pytest.approx(1.0, abs=1e-9)
        assert math.cos(fit.phase) == pytest.approx(1.0, abs=1e-9)

    def test_dense_noiseless_matches_max_min_identity(self):
        # grid aligned so the sampled points include the exact extremes
        phi = np.linspace(0, 2 * math.pi, 100, endpoint=False) - 0.8
        y = 120.0 * (1 + 0.63 * np.cos(phi + 0.8))
        fit = analysis.fit_fringe(phi, y)
        identity = (y.max() - y.min()) / (y.max() + y.min())
        assert fit.visibility == pytest.approx(identity, abs=1e-6)

    def test_gauge_invariance(self):
        phi = np.linspace(0, 2 * math.pi, 24, endpoint=False)
        y = 80.0 * (1 + 0.78 * np.cos(phi + 0.5))
        delta = 0.37
        a = analysis.fit_fringe(phi, y)
        b = analysis.fit_fringe(phi + delta, y)
        assert b.visibility == pytest.approx(a.visibility, abs=1e-9)
        shift = (b.phase - a.phase + delta) % (2 * math.pi)
        shift = min(shift, 2 * math.pi - shift)
        assert shift == pytest.approx(0.0, abs=1e-9)

    def test_insufficient_phase_coverage(self):
        phi = np.array([0.0, 0.5, 1.0, 1.5])
        with pytest.raises(analysis.FitError):
            analysis.fit_fringe(phi, 10 * (1 + np.cos(phi)))

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        phi = np.linspace(0, 2 * math.pi, 30)
        for _ in range(5):
            params = [rng.uniform(20, 100), rng.uniform(0.2, 0.95), rng.uniform(0, 6)]
            jac = analysis.fringe_jacobian(phi, *params)
            num = finite_difference_jacobian(analysis.fringe_model, phi, params)
            assert np.max(np.abs(jac - num)) / np.max(np.abs(num)) < 1e-5


def synthetic_map(kappa_s, kappa_i, phi_p, offset=120.0, visibility=0.9,
                  n=14, span_s=9.0, span_i=9.0, rng=None):
    points = []
    for a in np.linspace(0, span_s, n):
        for b in np.linspace(0, span_i, n):
            value = analysis.calibration_model(
                np.array([a]), np.array([b]), offset, visibility,
                kappa_s, kappa_i, phi_p,
            )[0]
            if rng is not None:
                value = rng.poisson(value)
            points.append((a, b, float(value)))
    return points


class TestCalibrationMap:
    def test_noiseless_recovery(self):
        fit = analysis.fit_calibration_map(synthetic_map(0.8, 1.1, 2.1))
        assert fit.kappa_s == pytest.approx(0.8, abs=1e-6)
        assert fit.kappa_i == pytest.approx(1.1, abs=1e-6)
        assert fit.phi_p == pytest.approx(2.1, abs=1e-6)
        assert fit.phi0_s == 0.0 and fit.phi0_i == 0.0

    def test_noisy_pump_phase_recovery(self):
        rng = np.random.default_rng(8)
        errors = []
        for _ in range(20):
            fit = analysis.fit_calibration_map(
                synthetic_map(0.8, 1.1, 2.1, offset=300.0, rng=rng)
            )
            err = (fit.phi_p - 2.1 + math.pi) % (2 * math.pi) - math.pi
            errors.append(abs(err))
        assert np.median(errors) < 0.05
        assert max(errors) < 0.15

    def test_single_axis_slice_reduces_to_fringe(self):
        # a map row at fixed idler power is a plain fringe in the signal
        # heater phase, with the same visibility the 2D fit reports
        kappa_s, kappa_i, phi_p = 0.8, 1.1, 2.1
        points = synthetic_map(kappa_s, kappa_i, phi_p, visibility=0.8)
        map_fit = analysis.fit_calibration_map(points)
        fixed_pi = points[0][1]
        row = [(p, c) for p, q, c in points if q == fixed_pi]
        fringe = analysis.fit_fringe(
            [kappa_s * p for p, _ in row], [c for _, c in row]
        )
        assert fringe.visibility == pytest.approx(map_fit.visibility, abs=1e-6)
        assert fringe.visibility == pytest.approx(0.8, abs=1e-6)

    def test_insufficient_span(self):
        points = synthetic_map(0.8, 1.1, 0.5, span_i=2.0)
        with pytest.raises(analysis.FitError):
            analysis.fit_calibration_map(points)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        ps = rng.uniform(0, 8, 30)
        pi = rng.uniform(0, 8, 30)

        def model(dummy, *params):
            return analysis.calibration_model(ps, pi, *params)

        for _ in range(5):
            params = [rng.uniform(50, 200), rng.uniform(0.3, 0.9),
                      rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5),
                      rng.uniform(0, 6)]
            jac = analysis.calibration_jacobian(ps, pi, *params)
            num = finite_difference_jacobian(model, np.zeros(30), params)
            assert np.max(np.abs(jac - num)) / np.max(np.abs(num)) < 1e-5


class TestProjectorPowers:
    def test_identity_map(self):
        fit = analysis.CalibrationFit(kappa_s=1.0, kappa_i=1.0, phi_p=0.0,
                                      offset=1.0, visibility=1.0)
        assert analysis.projector_powers(fit, (0.0, 0.0)) == (0.0, 0.0)

    def test_half_slope(self):
        fit = analysis.CalibrationFit(kappa_s=0.5, kappa_i=1.0, phi_p=0.0,
                                      offset=1.0, visibility=1.0)
        p_s, p_i = analysis.projector_powers(fit, (math.pi / 2, 0.0))
        assert p_s == pytest.approx(math.pi)
        assert p_i == pytest.approx(0.0)

    def test_frame_rotation_restores_fringe_phase(self):
        fit = analysis.CalibrationFit(kappa_s=0.8, kappa_i=1.3, phi_p=2.2,
                                      offset=1.0, visibility=1.0)
        for desired in [(0.0, 0.0), (math.pi / 2, 0.0), (1.1, 2.0)]:
            p_s, p_i = analysis.projector_powers(fit, desired)
            phase = fit.kappa_s * p_s + fit.kappa_i * p_i - fit.phi_p
            want = desired[0] + desired[1]
            diff = (phase - want + math.pi) % (2 * math.pi) - math.pi
            assert diff == pytest.approx(0.0, abs=1e-9)
            settings = qstate.PhaseSettings(
                desired[0] + fit.phi_p / 2, desired[1] + fit.phi_p / 2, fit.phi_p
            )
            assert qstate.interfering_probability(settings) == pytest.approx(
                (1 + math.cos(want)) / 4, abs=1e-12
            )

    def test_power_limit(self):
        fit = analysis.CalibrationFit(kappa_s=0.1, kappa_i=0.1, phi_p=0.0,
                                      offset=1.0, visibility=1.0)
        with pytest.raises(analysis.FitError):
            analysis.projector_powers(fit, (math.pi, math.pi), max_power_mw=10.0)
