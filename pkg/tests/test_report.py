"""Macro-averaging, bootstrap intervals, and report emission."""

import numpy as np
import pytest

from glyceval.report import (
    MetricReport,
    RunConfig,
    bootstrap_ci,
    build_report,
    emit_report,
    macro_average,
    pareto_points,
)


class TestMacroAverage:
    def test_equal_patient_weight(self):
        assert macro_average({"a": 1.0, "b": 3.0}) == 2.0

    def test_ignores_undefined(self):
        assert macro_average({"a": 1.0, "b": None}) == 1.0

    def test_all_undefined_is_none(self):
        assert macro_average({"a": None}) is None


class TestBootstrapCi:
    def test_degenerate_single_patient(self):
        assert bootstrap_ci([5.0]) == (5.0, 5.0)

    def test_constant_values_collapse(self):
        low, high = bootstrap_ci([2.0] * 8)
        assert low == high == 2.0

    def test_contains_mean_and_orders(self, rng):
        values = rng.normal(10.0, 2.0, size=30).tolist()
        low, high = bootstrap_ci(values, resamples=2_000, seed=1)
        assert low <= float(np.mean(values)) <= high
        assert high - low < 4.0  # roughly 4 se at n=30, sd=2

    def test_deterministic_in_seed(self, rng):
        values = rng.normal(size=20).tolist()
        assert bootstrap_ci(values, seed=7) == bootstrap_ci(values, seed=7)
        assert bootstrap_ci(values, seed=7) != bootstrap_ci(values, seed=8)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            bootstrap_ci([])

    def test_coverage_on_known_distribution(self, rng):
        # the 95% interval for the mean should cover the true mean in
        # roughly 95% of repeated draws
        hits = 0
        for i in range(200):
            sample = rng.normal(0.0, 1.0, size=25).tolist()
            low, high = bootstrap_ci(sample, resamples=500, seed=i)
            hits += low <= 0.0 <= high
        assert 0.85 <= hits / 200 <= 1.0


class TestBuildReport:
    def test_fields(self):
        report = build_report("recall", {"a": 1.0, "b": 0.5, "c": None},
                              slice_name="overall", horizon=30, model="zoh")
        assert report.macro_mean == 0.75
        assert report.n_patients == 2
        assert report.ci_low is not None and report.ci_high is not None

    def test_all_missing(self):
        report = build_report("recall", {"a": None})
        assert report.macro_mean is None and report.ci_low is None


class TestParetoPoints:
    def test_dominance(self):
        points = {"good": (0.9, 1.0), "bad": (0.5, 2.0), "tradeoff": (0.95, 3.0)}
        rows = {r["model"]: r["dominated"] for r in pareto_points(points)}
        assert rows == {"good": False, "bad": True, "tradeoff": False}

    def test_ties_do_not_dominate(self):
        points = {"a": (0.9, 1.0), "b": (0.9, 1.0)}
        assert all(not r["dominated"] for r in pareto_points(points))


class TestEmitReport:
    def _reports(self):
        return [
            build_report("recall", {"a": 1.0, "b": 0.5}, model="zoh",
                         slice_name="overall", horizon=30),
            build_report("fa_per_day", {"a": 0.1, "b": None}, model="zoh",
                         slice_name="overall", horizon=30),
        ]

    def test_emits_expected_files(self, tmp_path):
        emit_report(self._reports(), tmp_path, pareto={"zoh": (0.75, 0.1)})
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "summary.json").exists()
        assert (tmp_path / "pareto.csv").exists()

    def test_byte_identical_reruns(self, tmp_path):
        emit_report(self._reports(), tmp_path / "run1", pareto={"zoh": (0.75, 0.1)})
        emit_report(self._reports(), tmp_path / "run2", pareto={"zoh": (0.75, 0.1)})
        for name in ("metrics.csv", "summary.json", "pareto.csv"):
            assert (tmp_path / "run1" / name).read_bytes() == \
                (tmp_path / "run2" / name).read_bytes()

    def test_missing_values_serialized_empty(self, tmp_path):
        emit_report([build_report("recall", {"a": None})], tmp_path)
        rows = (tmp_path / "metrics.csv").read_text().splitlines()
        assert rows[1].endswith(",,,0")


class TestRunConfig:
    def test_stage_seeds_differ(self):
        config = RunConfig(master_seed=5)
        a = config.stage_seed(1).generate_state(1)[0]
        b = config.stage_seed(2).generate_state(1)[0]
        assert a != b

    def test_defaults_match_standard_protocol(self):
        config = RunConfig()
        assert config.history_len == 288
        assert config.horizon_len == 24
        assert config.ph_steps == 6
        assert config.threshold == 70.0
