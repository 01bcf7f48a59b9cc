import math

import numpy as np
import pytest

from franson_lab import qstate, tomography

PHI_PLUS_RHO = qstate.pure_density(qstate.phi_plus())

COMPLETE_SETTINGS = tomography.CANONICAL_SETTINGS + ((0.9, 2.3),)


def random_physical_rho(rng):
    t = np.tril(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    s = t @ t.conj().T
    return s / np.trace(s).real


def trace_distance(a, b):
    return 0.5 * float(np.abs(np.linalg.eigvalsh(a - b)).sum())


class TestMeasurementOperators:
    def test_tt_expectation_on_phi_plus(self):
        ops = tomography.measurement_operators([(0.0, 0.0)])[0]
        value = np.trace(ops["TT"] @ PHI_PLUS_RHO).real
        assert value == pytest.approx(0.5, abs=1e-12)

    def test_ee_expectation_setting_independent(self):
        for setting in [(0.0, 0.0), (1.0, 2.0), (math.pi / 2, math.pi / 2)]:
            ops = tomography.measurement_operators([setting])[0]
            value = np.trace(ops["EE"] @ PHI_PLUS_RHO).real
            assert value == pytest.approx(0.125, abs=1e-12)

    def test_total_matches_outcome_distribution(self):
        settings = qstate.PhaseSettings(0.7, 1.9)
        ops = tomography.measurement_operators([(0.7, 1.9)])[0]
        rho = qstate.werner_state(0.8)
        dist = qstate.outcome_probabilities(rho, settings)
        total_ops = sum(
            np.trace(ops[label] @ rho).real for label in qstate.REGIONS
        )
        assert total_ops == pytest.approx(dist.total(), abs=1e-12)

    def test_corners_vanish_on_sector(self):
        ops = tomography.measurement_operators([(0.3, 1.2)])[0]
        for label in qstate.CORNER_REGIONS:
            assert np.trace(ops[label] @ PHI_PLUS_RHO).real == pytest.approx(
                0.0, abs=1e-14
            )


class TestMleReconstruct:
    def test_noiseless_phi_plus(self):
        records = tomography.forward_counts(PHI_PLUS_RHO, 1e6)
        result = tomography.mle_reconstruct(records)
        assert result.metrics.fidelity_phi_plus >= 0.999
        assert result.converged
        assert result.informationally_complete

    def test_noiseless_dephased_state(self):
        rho = qstate.dephased_bell(0.0, 0.781)
        records = tomography.forward_counts(rho, 1e6)
        result = tomography.mle_reconstruct(records)
        assert result.metrics.fidelity_phi_plus == pytest.approx(0.8905, abs=0.01)

    def test_maximally_mixed_input(self):
        records = tomography.forward_counts(np.eye(4) / 4, 1e6)
        result = tomography.mle_reconstruct(records)
        assert result.metrics.concurrence == pytest.approx(0.0, abs=1e-3)
        assert result.metrics.purity == pytest.approx(0.25, abs=1e-3)

    def test_reconstruction_is_physical(self):
        rng = np.random.default_rng(21)
        records = tomography.forward_counts(
            qstate.dephased_bell(0.4, 0.7), 3000, rng=rng
        )
        result = tomography.mle_reconstruct(records)
        qstate.validate_density_matrix(result.rho)

    def test_log_likelihood_monotone(self):
        records = tomography.forward_counts(qstate.dephased_bell(0.0, 0.781), 1e5)
        result = tomography.mle_reconstruct(records)
        history = np.array(result.ll_history)
        assert history.size > 3
        assert np.all(np.diff(history) >= -1e-6 * np.abs(history[:-1]))

    def test_round_trip_random_states_when_complete(self):
        rng = np.random.default_rng(31)
        for _ in range(4):
            rho = random_physical_rho(rng)
            records = tomography.forward_counts(
                rho, 1e7, settings=COMPLETE_SETTINGS
            )
            result = tomography.mle_reconstruct(records)
            assert result.informationally_complete
            assert trace_distance(result.rho, rho) < 0.01

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(9)
        records = tomography.forward_counts(
            qstate.dephased_bell(0.0, 0.8), 5000, rng=rng
        )
        a = tomography.mle_reconstruct(records, tomography.MleConfig(rng_seed=3))
        b = tomography.mle_reconstruct(records, tomography.MleConfig(rng_seed=3))
        np.testing.assert_array_equal(a.rho, b.rho)

    def test_missing_setting_rejected(self):
        records = tomography.forward_counts(
            PHI_PLUS_RHO, 1e4, settings=((0.0, 0.0), (1.0, 1.0), (2.0, 0.5),
                                         (0.4, 0.4))
        )
        with pytest.raises(tomography.TomographyError):
            tomography.mle_reconstruct(records)

    def test_all_zero_counts_rejected(self):
        records = [
            tomography.MeasurementRecord(phi_s, phi_i, {})
            for phi_s, phi_i in tomography.CANONICAL_SETTINGS
        ]
        with pytest.raises(tomography.TomographyError):
            tomography.mle_reconstruct(records)

    def test_corner_diagnostic_reported(self):
        records = tomography.forward_counts(PHI_PLUS_RHO, 1e4)
        for r in records:
            r.region_counts["EL"] = 3.0
        result = tomography.mle_reconstruct(records)
        assert result.corner_counts["EL"] == pytest.approx(12.0)


class TestMonteCarlo:
    RHO = qstate.dephased_bell(0.0, 0.781)

    def test_single_trial_equals_point_estimate(self):
        records = tomography.forward_counts(self.RHO, 1e5)
        point = tomography.mle_reconstruct(records)
        mc = tomography.monte_carlo_errors(
            records, n_trials=1, point_estimate=point
        )
        assert mc.n_trials == 1
        assert mc.mean("fidelity_phi_plus") == pytest.approx(
            point.metrics.fidelity_phi_plus
        )
        assert mc.std("fidelity_phi_plus") == 0.0

    def test_spread_at_paper_scale_counts(self):
        records = tomography.forward_counts(self.RHO, 6000)
        point = tomography.mle_reconstruct(records)
        mc = tomography.monte_carlo_errors(
            records, n_trials=300, point_estimate=point
        )
        assert mc.n_failed == 0
        std = mc.std("fidelity_phi_plus")
        assert 0.003 < std < 0.03
        # mean consistent with the point estimate
        assert abs(
            mc.mean("fidelity_phi_plus") - point.metrics.fidelity_phi_plus
        ) < 2.0 * std

    def test_std_scales_inverse_root_counts(self):
        stds = []
        totals = (1e3, 1e4, 1e5)
        for n in totals:
            records = tomography.forward_counts(self.RHO, n)
            point = tomography.mle_reconstruct(records)
            mc = tomography.monte_carlo_errors(
                records, n_trials=150, point_estimate=point
            )
            stds.append(mc.std("fidelity_phi_plus"))
        slope = np.polyfit(np.log(totals), np.log(stds), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.1)

    def test_deterministic_given_seed(self):
        records = tomography.forward_counts(self.RHO, 5000)
        point = tomography.mle_reconstruct(records)
        a = tomography.monte_carlo_errors(records, n_trials=25,
                                          point_estimate=point, rng_seed=5)
        b = tomography.monte_carlo_errors(records, n_trials=25,
                                          point_estimate=point, rng_seed=5)
        np.testing.assert_array_equal(
            a.samples["fidelity_phi_plus"], b.samples["fidelity_phi_plus"]
        )

    def test_csv_output(self, tmp_path):
        records = tomography.forward_counts(self.RHO, 5000)
        point = tomography.mle_reconstruct(records)
        mc = tomography.monte_carlo_errors(records, n_trials=10,
                                           point_estimate=point)
        path = tmp_path / "mc.csv"
        mc.write_csv(path)
        lines = path.read_text().splitlines()
        assert len(lines) == 11
        assert lines[0].startswith("trial,fidelity_phi_plus,")


class TestReportMetrics:
    def test_phi_plus(self):
        metrics = tomography.report_metrics(PHI_PLUS_RHO)
        assert metrics.fidelity_phi_plus == pytest.approx(1.0)
        assert metrics.concurrence == pytest.approx(1.0, abs=1e-9)
        assert metrics.entropy_bits == pytest.approx(0.0, abs=1e-9)
        assert metrics.reduced_entropy_bits == pytest.approx(1.0, abs=1e-9)
        assert metrics.chsh_max == pytest.approx(2 * math.sqrt(2), abs=1e-9)
        assert metrics.purity == pytest.approx(1.0)
        assert metrics.chsh_violated

    def test_werner(self):
        metrics = tomography.report_metrics(qstate.werner_state(0.76))
        assert metrics.concurrence == pytest.approx(0.64, abs=1e-9)
        assert metrics.chsh_max == pytest.approx(2 * math.sqrt(2) * 0.76, abs=1e-9)
        assert metrics.chsh_violated

    def test_maximally_mixed(self):
        metrics = tomography.report_metrics(np.eye(4, dtype=complex) / 4)
        assert metrics.fidelity_phi_plus == pytest.approx(0.25)
        assert metrics.concurrence == 0.0
        assert metrics.entropy_bits == pytest.approx(2.0)
        assert metrics.chsh_max <= 2.0
        assert not metrics.chsh_violated


class TestRecordsIO:
    def test_json_round_trip(self, tmp_path):
        records = tomography.forward_counts(PHI_PLUS_RHO, 1234.0)
        path = tmp_path / "records.json"
        tomography.records_to_json_file(records, path)
        back = tomography.records_from_json_file(path)
        assert len(back) == len(records)
        for a, b in zip(records, back):
            assert a.phi_s == b.phi_s and a.phi_i == b.phi_i
            for label in qstate.REGIONS:
                assert a.region_counts.get(label, 0.0) == pytest.approx(
                    b.region_counts.get(label, 0.0)
                )

    def test_bad_schema_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema_version": 9, "records": []}')
        with pytest.raises(tomography.TomographyError):
            tomography.records_from_json_file(path)
