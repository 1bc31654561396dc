import csv

import numpy as np
import pytest

from rvolest import (
    ExperimentPlan,
    RobustConfig,
    coverage_curve,
    get_preset,
    run_plan,
)
from rvolest.montecarlo import (
    estimator_label,
    write_lambda_sweep_csv,
    write_raw_theta_csv,
    write_raw_u_csv,
    write_summary_csv,
)


def small_plan(replications=4, threads=1, estimators=None, preset="sec6-1-spike", n=150):
    scenario = get_preset(preset, n=n, seed=42)
    if estimators is None:
        estimators = (RobustConfig.gqlf(), RobustConfig.density_power(0.5))
    return ExperimentPlan(
        scenario=scenario,
        estimators=tuple(estimators),
        replications=replications,
        threads=threads,
    )


class TestRunPlan:
    def test_shapes_and_labels(self):
        plan = small_plan()
        table = run_plan(plan)
        assert table.raw_theta.shape == (4, 2, 3)
        assert table.labels[0] == ("gqlf", pytest.approx(float("nan"), nan_ok=True))
        assert table.labels[1] == ("dp", 0.5)
        assert table.failed.sum() == 0
        assert np.all(table.times >= 0.0)

    def test_single_replication_degenerate_stats(self):
        plan = small_plan(replications=1, preset="sec6-1-clean")
        table = run_plan(plan)
        np.testing.assert_array_equal(table.sd(), np.zeros((2, 3)))
        cov = table.coverage()
        assert set(np.unique(cov[np.isfinite(cov)])) <= {0.0, 1.0}

    def test_identical_across_worker_counts(self):
        serial = run_plan(small_plan(threads=1))
        parallel = run_plan(small_plan(threads=2))
        np.testing.assert_array_equal(serial.raw_theta, parallel.raw_theta)
        np.testing.assert_array_equal(serial.raw_u, parallel.raw_u)
        np.testing.assert_array_equal(serial.cover, parallel.cover)

    def test_coverage_excludes_unconverged(self):
        plan = small_plan(replications=3, preset="sec6-1-clean")
        table = run_plan(plan)
        # all converge on clean data at this size
        assert table.converged.all()
        assert np.isfinite(table.cover).all()

    def test_replications_validated(self):
        with pytest.raises(ValueError):
            small_plan(replications=0)

    def test_mean_tracks_truth_on_clean_data(self):
        plan = small_plan(replications=8, preset="sec6-1-clean", n=400,
                          estimators=(RobustConfig.gqlf(),))
        table = run_plan(plan)
        np.testing.assert_allclose(table.mean()[0], [-2.0, 3.0, 0.0], atol=0.25)


class TestCoverageCurve:
    def test_rows(self):
        plan = small_plan(
            replications=3,
            preset="sec6-1-clean",
            estimators=(
                RobustConfig.density_power(0.3),
                RobustConfig.density_power(0.7),
            ),
        )
        rows = coverage_curve(plan)
        assert [(lam, coord) for lam, coord, _ in rows] == [
            (0.3, 1), (0.3, 2), (0.3, 3), (0.7, 1), (0.7, 2), (0.7, 3),
        ]
        assert all(0.0 <= c <= 1.0 for _, _, c in rows)

    def test_gqlf_excluded(self):
        plan = small_plan(replications=2, preset="sec6-1-clean")
        rows = coverage_curve(plan)
        assert all(lam == 0.5 for lam, _, _ in rows)


class TestCsvOutputs:
    def read(self, path):
        with open(path, newline="") as fh:
            return list(csv.reader(fh))

    def test_summary_schema(self, tmp_path):
        table = run_plan(small_plan(replications=2))
        out = tmp_path / "summary.csv"
        write_summary_csv(table, str(out))
        rows = self.read(out)
        assert rows[0] == ["estimator", "lambda", "coord", "mean", "sd",
                           "coverage", "failures", "mean_time_s"]
        assert len(rows) == 1 + 2 * 3

    def test_raw_schema_and_precision(self, tmp_path):
        table = run_plan(small_plan(replications=2))
        theta_file = tmp_path / "raw_theta.csv"
        u_file = tmp_path / "raw_u.csv"
        write_raw_theta_csv(table, str(theta_file))
        write_raw_u_csv(table, str(u_file))
        rows = self.read(theta_file)
        assert rows[0] == ["rep", "estimator", "lambda", "theta_1", "theta_2", "theta_3"]
        assert len(rows) == 1 + 2 * 2
        # 17 significant digits round-trip exactly
        assert float(rows[1][3]) == table.raw_theta[0, 0, 0]
        assert len(self.read(u_file)) == 1 + 2 * 2

    def test_lambda_sweep_excludes_gqlf(self, tmp_path):
        table = run_plan(small_plan(replications=2))
        out = tmp_path / "lambda_sweep.csv"
        write_lambda_sweep_csv(table, str(out))
        rows = self.read(out)
        assert rows[0] == ["lambda", "coord", "mean", "sd"]
        assert len(rows) == 1 + 3
        assert all(row[0] == "0.5" for row in rows[1:])


def test_estimator_label():
    assert estimator_label(RobustConfig.gqlf())[0] == "gqlf"
    assert estimator_label(RobustConfig.hoelder(0.25)) == ("holder", 0.25)
