"""End-to-end benchmark orchestration.

Builds the synthetic cohort, fits baselines, runs the gating and
counterfactual evaluations, and emits deterministic reports. The whole
run is a pure function of ``RunConfig`` (master seed included).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import alarms as alarms_mod
from .alarms import GatingResult, detect_events, gating_metrics, generate_alarms, match_alarms, tag_event
from .counterfactual import (
    SubjectEffectMetrics,
    SubjectPolicyMetrics,
    evaluate_action_selection,
    evaluate_effect_metrics,
    make_model_predictor,
)
from .forecasters import ArxForecaster, ZohForecaster, fit_arx, predict_over_record
from .insilico import (
    StandardTrajectory,
    generate_action_rollouts,
    generate_paired_episodes,
    generate_standard,
    mean_nonzero_bolus,
    sample_subject,
    _episode_onsets,
)
from .report import MetricReport, RunConfig, build_report, emit_report
from .risk import PegZone, peg_zone
from .timeseries import (
    SLICE_NOCTURNAL,
    SLICE_OVERALL,
    SLICE_POST_BOLUS,
    SequenceRecord,
    extract_windows,
    is_nocturnal,
    split_patients,
)

GATING_SLICES = (SLICE_OVERALL, SLICE_POST_BOLUS, SLICE_NOCTURNAL)


def simulate_cohort(n_subjects: int, days: int = 15,
                    base_seed: int = 0) -> List[StandardTrajectory]:
    """Deterministic virtual cohort; subject seeds derived from the base seed."""
    seeds = np.random.SeedSequence([base_seed, 0]).generate_state(n_subjects)
    return [generate_standard(sample_subject(int(s)), days=days) for s in seeds]


def _alarm_slice_tags(record: SequenceRecord, index: int, utc_offset_s: int = 0):
    tags = {SLICE_OVERALL}
    t = record.grid.time_at(index)
    times = record.grid.times()
    window = (times > t - 3_600) & (times <= t)
    if np.any(record.bolus[window] > 0):
        tags.add(SLICE_POST_BOLUS)
    if is_nocturnal(t, utc_offset_s):
        tags.add(SLICE_NOCTURNAL)
    return tags


def evaluate_gating_record(model, record: SequenceRecord, history_len: int,
                           horizon_len: int, ph_steps: int,
                           threshold: float = 70.0, utc_offset_s: int = 0):
    """Events, detections, and false alarms for one record under one model.

    Only events whose full pre-onset window lies inside the forecastable
    origin range are scored; earlier or later onsets cannot be alarmed by
    any model and would distort the recall denominator.
    """
    first_origin = history_len - 1
    last_origin = record.n_steps - horizon_len - 1
    events = [tag_event(e, record, utc_offset_s)
              for e in detect_events(record.cgm, threshold)
              if e.onset_index - ph_steps >= first_origin
              and e.onset_index - 1 <= last_origin]
    origins, preds = predict_over_record(model, record, history_len, horizon_len)
    alarm_list = generate_alarms(preds, origins, ph_steps, threshold, record.pat_id)
    detected, unmatched = match_alarms(alarm_list, events, ph_steps)
    return events, detected, unmatched


def evaluate_gating(model, records: Sequence[SequenceRecord], history_len: int,
                    horizon_len: int, ph_steps: int, threshold: float = 70.0,
                    slices: Sequence[str] = GATING_SLICES,
                    utc_offset_s: int = 0) -> Dict[str, List[GatingResult]]:
    """Per-patient gating metrics per slice, over all records of a cohort.

    Events carry slice tags evaluated at onset; unmatched alarms are
    tagged by the same predicates at the alarm origin. The patient-day
    denominator is the total retained gridded duration.
    """
    by_patient: Dict[str, list] = {}
    for record in records:
        by_patient.setdefault(record.pat_id, []).append(record)

    results: Dict[str, List[GatingResult]] = {s: [] for s in slices}
    for pat_id in sorted(by_patient):
        events_all, detected_all, unmatched_all = [], [], []
        duration_s = 0.0
        for record in by_patient[pat_id]:
            events, detected, unmatched = evaluate_gating_record(
                model, record, history_len, horizon_len, ph_steps, threshold, utc_offset_s)
            events_all.extend(events)
            detected_all.extend(detected)
            unmatched_all.extend((record, a) for a in unmatched)
            duration_s += record.n_steps * record.grid.step
        for slice_name in slices:
            sl_events = [e for e in events_all if slice_name in e.slice_tags]
            sl_detected = [(e, a) for e, a in detected_all if slice_name in e.slice_tags]
            sl_unmatched = [
                a for rec, a in unmatched_all
                if slice_name in _alarm_slice_tags(rec, a.time_index, utc_offset_s)
            ]
            results[slice_name].append(gating_metrics(
                sl_detected, sl_unmatched, sl_events, duration_s, pat_id=pat_id))
    return results


FORECAST_LEADS = (6, 12, 24)  # 30, 60 and 120 minutes on the 5-minute grid


def evaluate_forecast(model, records: Sequence[SequenceRecord], history_len: int,
                      horizon_len: int, leads: Sequence[int] = FORECAST_LEADS,
                      slices: Sequence[str] = GATING_SLICES,
                      utc_offset_s: int = 0) -> Dict[Tuple[str, int, str], Dict[str, Optional[float]]]:
    """Per-patient forecasting accuracy per slice and lead.

    Returns {(slice, lead, metric): {pat_id: value}} for metric in
    {"rmse", "unsafe_fraction"}; unsafe_fraction is the percentage of
    predictions falling in the dangerous error-grid zones.
    """
    by_patient: Dict[str, list] = {}
    for record in records:
        by_patient.setdefault(record.pat_id, []).append(record)

    out: Dict[Tuple[str, int, str], Dict[str, Optional[float]]] = {
        (s, lead, m): {} for s in slices for lead in leads
        for m in ("rmse", "unsafe_fraction")}
    for pat_id in sorted(by_patient):
        pools: Dict[Tuple[str, int], list] = {(s, lead): [] for s in slices for lead in leads}
        for record in by_patient[pat_id]:
            origins, preds = predict_over_record(model, record, history_len, horizon_len)
            for i, origin in enumerate(origins):
                tags = _alarm_slice_tags(record, int(origin), utc_offset_s)
                for lead in leads:
                    ref = record.cgm[origin + lead]
                    pred = preds[i][lead - 1]
                    for s in slices:
                        if s in tags:
                            pools[(s, lead)].append((ref, pred))
            del preds
        for (s, lead), pairs in pools.items():
            if not pairs:
                out[(s, lead, "rmse")][pat_id] = None
                out[(s, lead, "unsafe_fraction")][pat_id] = None
                continue
            arr = np.asarray(pairs)
            out[(s, lead, "rmse")][pat_id] = float(
                np.sqrt(np.mean((arr[:, 1] - arr[:, 0]) ** 2)))
            unsafe = [peg_zone(r, min(max(p, 20.0), 600.0)) in
                      (PegZone.C, PegZone.D, PegZone.E) for r, p in pairs]
            out[(s, lead, "unsafe_fraction")][pat_id] = float(100.0 * np.mean(unsafe))
    return out


def forecast_reports(model_name: str, metrics, resamples: int, seed: int):
    """MetricReports from an ``evaluate_forecast`` result."""
    return [
        build_report(metric, per_patient, resamples, seed, slice_name=slice_name,
                     horizon=lead * 5, model=model_name)
        for (slice_name, lead, metric), per_patient in sorted(metrics.items())
    ]


def gating_reports(model_name: str, gating: Dict[str, List[GatingResult]],
                   resamples: int, seed: int, horizon: Optional[int] = None):
    """MetricReports (recall, FA/day, median lead) per slice."""
    reports = []
    for slice_name, rows in gating.items():
        per_patient_recall = {r.pat_id: r.recall for r in rows}
        per_patient_fa = {r.pat_id: r.false_alarms_per_day for r in rows}
        per_patient_lead = {r.pat_id: r.median_lead_minutes for r in rows}
        for metric, values in (("recall", per_patient_recall),
                               ("fa_per_day", per_patient_fa),
                               ("median_lead_min", per_patient_lead)):
            reports.append(build_report(metric, values, resamples, seed,
                                        slice_name=slice_name, horizon=horizon,
                                        model=model_name))
    return reports


def fit_cohort_arx(trajectories: Sequence[StandardTrajectory], subject_ids,
                   history_len: int, horizon_len: int, lag_order: int = 12,
                   ridge_weight: float = 30.0, action_conditional: bool = False,
                   stride: int = 12, max_samples_per_subject: int = 200) -> ArxForecaster:
    """Fit the ARX baseline on the training subjects' standard records."""
    samples = []
    for traj in trajectories:
        if traj.subject.subject_id not in subject_ids:
            continue
        windows = extract_windows(traj.record, history_len, horizon_len, stride=stride)
        samples.extend(windows[:max_samples_per_subject])
    params = fit_arx(samples, lag_order=lag_order, ridge_weight=ridge_weight,
                     action_conditional=action_conditional)
    return ArxForecaster(params)


@dataclass
class FullRunResult:
    reports: List[MetricReport]
    pareto: Dict[str, Tuple[float, float]]


def run_full(config: RunConfig, out_dir) -> FullRunResult:
    """simulate -> split -> fit -> gating eval -> counterfactual eval -> report."""
    cohort = simulate_cohort(config.n_subjects, config.days,
                             base_seed=int(config.stage_seed(1).generate_state(1)[0]))
    subject_ids = [t.subject.subject_id for t in cohort]
    split = split_patients(subject_ids, config.ratios,
                           seed=int(config.stage_seed(2).generate_state(1)[0]))
    test_trajs = [t for t in cohort if t.subject.subject_id in split.test]
    test_records = [t.record for t in test_trajs]

    arx = fit_cohort_arx(cohort, split.train, config.history_len, config.horizon_len,
                         ridge_weight=config.ridge_weight, action_conditional=True)
    models = {"zoh": ZohForecaster(), "arx": arx}

    boot_seed = int(config.stage_seed(3).generate_state(1)[0])
    reports: List[MetricReport] = []
    pareto: Dict[str, Tuple[float, float]] = {}
    for name, model in models.items():
        gating = evaluate_gating(model, test_records, config.history_len,
                                 config.horizon_len, config.ph_steps, config.threshold,
                                 slices=config.slices)
        model_reports = gating_reports(name, gating, config.bootstrap_resamples,
                                       boot_seed, horizon=config.ph_steps * 5)
        reports.extend(model_reports)
        overall = {r.metric: r for r in model_reports if r.slice_name == SLICE_OVERALL}
        recall = overall["recall"].macro_mean
        fa = overall["fa_per_day"].macro_mean
        if recall is not None and fa is not None:
            pareto[name] = (recall, fa)

    # counterfactual arm on the test subjects, action-conditional ARX
    predictor = make_model_predictor(arx, config.history_len)
    effect_rows: List[SubjectEffectMetrics] = []
    policy_rows: List[SubjectPolicyMetrics] = []
    for traj in test_trajs:
        episodes = generate_paired_episodes(traj)
        effect_rows.extend(evaluate_effect_metrics(traj, episodes, predictor,
                                                   leads_min=config.leads_min))
        rollout_sets = [generate_action_rollouts(traj, onset)
                        for onset in _episode_onsets(traj)]
        policy_rows.append(evaluate_action_selection(traj, rollout_sets, predictor))

    for family in ("basal", "bolus"):
        for lead in config.leads_min:
            rows = [r for r in effect_rows
                    if r.family == family and r.lead_minutes == lead]
            for metric, attr in (("effect_rmse", "effect_rmse"),
                                 ("sign_agreement", "sign_agreement"),
                                 ("kendall_tau", "kendall_tau")):
                per_patient = {r.subject_id: getattr(r, attr) for r in rows}
                reports.append(build_report(
                    f"{metric}", per_patient, config.bootstrap_resamples, boot_seed,
                    slice_name=family, horizon=lead, model="arx"))
    reports.append(build_report(
        "action_match_rate", {r.subject_id: r.action_match_rate for r in policy_rows},
        config.bootstrap_resamples, boot_seed, model="arx"))
    reports.append(build_report(
        "policy_regret", {r.subject_id: r.mean_regret for r in policy_rows},
        config.bootstrap_resamples, boot_seed, model="arx"))

    emit_report(reports, out_dir, pareto=pareto)
    return FullRunResult(reports=reports, pareto=pareto)
