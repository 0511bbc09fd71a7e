"""Cohort-level evaluation plumbing."""

import numpy as np
import pytest

from glyceval.bench import (
    evaluate_forecast,
    evaluate_gating,
    evaluate_gating_record,
    fit_cohort_arx,
    forecast_reports,
    gating_reports,
    simulate_cohort,
)
from glyceval.forecasters import OracleForecaster, ZohForecaster

from conftest import make_record


@pytest.fixture(scope="module")
def cohort():
    return simulate_cohort(3, days=3, base_seed=99)


class TestSimulateCohort:
    def test_deterministic(self, cohort):
        again = simulate_cohort(3, days=3, base_seed=99)
        for a, b in zip(cohort, again):
            assert a.subject == b.subject
            assert np.array_equal(a.record.cgm, b.record.cgm)

    def test_distinct_subjects(self, cohort):
        assert len({t.subject.subject_id for t in cohort}) == 3


class TestEvaluateGatingRecord:
    def test_only_forecastable_events_scored(self):
        # event entirely before the first forecast origin must not count
        cgm = np.full(120, 100.0)
        cgm[3:8] = 60.0    # pre-onset window ends before origin H-1
        cgm[80:85] = 60.0  # fully forecastable
        rec = make_record(cgm, source="simulator")
        events, detected, _ = evaluate_gating_record(
            OracleForecaster(), rec, history_len=30, horizon_len=12, ph_steps=6)
        assert [e.onset_index for e in events] == [80]
        assert len(detected) == 1

    def test_oracle_detects_all_scored_events(self, cohort):
        # unmatched alarms can remain (sub-event dips, out-of-range events);
        # recall over scored events must still be perfect
        for traj in cohort:
            events, detected, _ = evaluate_gating_record(
                OracleForecaster(), traj.record, 288, 24, 6)
            assert len(detected) == len(events)


class TestEvaluateGating:
    def test_one_row_per_patient_per_slice(self, cohort):
        records = [t.record for t in cohort]
        gating = evaluate_gating(ZohForecaster(), records, 288, 24, 6)
        for rows in gating.values():
            assert [r.pat_id for r in rows] == sorted(t.subject.subject_id
                                                      for t in cohort)

    def test_reports_cover_three_metrics_per_slice(self, cohort):
        records = [t.record for t in cohort]
        gating = evaluate_gating(ZohForecaster(), records, 288, 24, 6)
        reports = gating_reports("zoh", gating, resamples=100, seed=0, horizon=30)
        assert len(reports) == 3 * len(gating)
        assert {r.metric for r in reports} == {"recall", "fa_per_day",
                                               "median_lead_min"}


class TestEvaluateForecast:
    def test_oracle_rmse_zero(self, cohort):
        records = [t.record for t in cohort]
        metrics = evaluate_forecast(OracleForecaster(), records, 288, 24,
                                    leads=(6,), slices=("overall",))
        for value in metrics[("overall", 6, "rmse")].values():
            assert value == pytest.approx(0.0, abs=1e-9)
        for value in metrics[("overall", 6, "unsafe_fraction")].values():
            assert value == 0.0

    def test_reports_carry_lead_in_minutes(self, cohort):
        records = [t.record for t in cohort[:1]]
        metrics = evaluate_forecast(ZohForecaster(), records, 288, 24,
                                    leads=(6, 12), slices=("overall",))
        reports = forecast_reports("zoh", metrics, resamples=100, seed=0)
        assert {r.horizon for r in reports} == {30, 60}


class TestFitCohortArx:
    def test_fits_on_named_subjects_only(self, cohort):
        ids = {cohort[0].subject.subject_id}
        model = fit_cohort_arx(cohort, ids, 288, 24, stride=4)
        assert model.params.action_conditional is False
        assert model.params.horizon_len == 24
