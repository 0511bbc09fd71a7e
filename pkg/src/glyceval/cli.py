"""Command-line entry points.

Thin argparse layer over the library: every subcommand reads/writes plain
CSV/JSON files so runs can be scripted and diffed. A JSON config file can
set any option; command-line flags override config values.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .bench import (
    evaluate_forecast,
    evaluate_gating,
    fit_cohort_arx,
    forecast_reports,
    gating_reports,
    run_full,
    simulate_cohort,
)
from .counterfactual import (
    evaluate_action_selection,
    evaluate_effect_metrics,
    make_model_predictor,
)
from .forecasters import (
    ArxForecaster,
    ZohForecaster,
    fit_arx,
    load_params,
    predict_over_record,
    save_params,
)
from .harmonize import (
    HarmonizeConfig,
    read_raw_events_dir,
    read_records_csv,
    run_pipeline,
    write_records_csv,
)
from .insilico import (
    EPISODE_STEPS,
    SequenceRecord,
    StandardTrajectory,
    TimeGrid,
    generate_action_rollouts,
    generate_paired_episodes,
    generate_standard,
    sample_subject,
    _episode_onsets,
)
from .report import RunConfig, emit_report
from .timeseries import extract_windows

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

COHORT_MANIFEST = "cohort.json"
EPISODE_MANIFEST = "episodes.csv"
ACTION_MANIFEST = "action_menu.csv"


def _load_config(path):
    if path is None:
        return {}
    config = json.loads(Path(path).read_text())
    if not isinstance(config, dict):
        raise ValueError("config file must hold a JSON object")
    return config


def _setting(args, config, key, default):
    """Flag beats config beats default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _run_config(args, config) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = set(config) - known - {"harmonize"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: v for k, v in config.items() if k in known}
    cfg = RunConfig(**kwargs)
    overrides = {}
    for name in ("n_subjects", "days", "history_len", "horizon_len", "ph_steps",
                 "threshold", "bootstrap_resamples", "master_seed", "ridge_weight"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "slices", None) is not None:
        overrides["slices"] = tuple(args.slices.split(","))
    if getattr(args, "leads", None) is not None:
        overrides["leads_min"] = tuple(int(v) for v in args.leads.split(","))
    return replace(cfg, **overrides) if overrides else cfg


def _harmonize_config(args, config) -> HarmonizeConfig:
    section = config.get("harmonize", {})
    known = {f.name for f in fields(HarmonizeConfig)}
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"unknown harmonize config keys: {sorted(unknown)}")
    kwargs = dict(section)
    for name in known:
        value = getattr(args, name, None)
        if value is not None:
            kwargs[name] = value
    return HarmonizeConfig(**kwargs)


def _load_model(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("model") == "zoh":
        return ZohForecaster()
    return ArxForecaster(load_params(path))


def _load_cohort(sim_dir):
    sim_dir = Path(sim_dir)
    manifest = json.loads((sim_dir / COHORT_MANIFEST).read_text())
    return [generate_standard(sample_subject(int(seed)), days=manifest["days"])
            for seed in manifest["subject_seeds"]]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_harmonize(args, config):
    cohort = read_raw_events_dir(args.in_dir)
    records, diagnostics = run_pipeline(cohort, _harmonize_config(args, config))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, out / "records.csv")
    (out / "diagnostics.json").write_text(
        json.dumps(dict(sorted(diagnostics.counts.items())), indent=2) + "\n")
    print(f"harmonized {len(cohort)} subjects -> {len(records)} records")
    return EXIT_OK


def _cmd_simulate(args, config):
    cfg = _run_config(args, config)
    cohort = simulate_cohort(cfg.n_subjects, cfg.days, base_seed=cfg.master_seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv([t.record for t in cohort], out / "records.csv")
    seeds = [t.subject.seed for t in cohort]
    (out / COHORT_MANIFEST).write_text(json.dumps({
        "format_version": 1, "base_seed": cfg.master_seed,
        "n_subjects": cfg.n_subjects, "days": cfg.days,
        "subject_seeds": seeds}, indent=2) + "\n")
    print(f"simulated {cfg.n_subjects} subjects x {cfg.days} days")
    return EXIT_OK


def _arm_record(traj: StandardTrajectory, seq_id, onset, cgm, basal, bolus):
    grid = TimeGrid(traj.record.grid.time_at(onset), traj.record.grid.step, EPISODE_STEPS)
    sl = slice(onset, onset + EPISODE_STEPS)
    return SequenceRecord(
        pat_id=traj.subject.subject_id, seq_id=seq_id, grid=grid,
        cgm=np.asarray(cgm, dtype=float), basal=np.asarray(basal, dtype=float),
        bolus_standard=np.asarray(bolus, dtype=float),
        bolus_extended=np.zeros(EPISODE_STEPS), meal=traj.record.meal[sl].copy(),
        weight=np.full(EPISODE_STEPS, traj.subject.weight_kg), source="simulator")


def _cmd_make_episodes(args, config):
    families = tuple(args.families.split(","))
    cohort = _load_cohort(args.in_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arm_records, rows = [], []
    for traj in cohort:
        for i, ep in enumerate(generate_paired_episodes(traj, families=families)):
            prefix = f"{ep.subject_id}-ep{i:03d}"
            arm_records.append(_arm_record(traj, f"{prefix}-factual", ep.onset_index,
                                           ep.factual_cgm, ep.factual_basal,
                                           ep.factual_bolus))
            arm_records.append(_arm_record(traj, f"{prefix}-cf", ep.onset_index,
                                           ep.cf_cgm, ep.cf_basal, ep.cf_bolus))
            rows.append([ep.subject_id, ep.onset_index, ep.perturbation.family,
                         ep.perturbation.kind, repr(ep.perturbation.parameter),
                         int(ep.valid), f"{prefix}-factual", f"{prefix}-cf"])
    write_records_csv(arm_records, out / "episode_records.csv")
    with (out / EPISODE_MANIFEST).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "onset_index", "family", "kind", "parameter",
                         "valid", "factual_seq", "cf_seq"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} episode pairs")
    return EXIT_OK


def _cmd_make_action_menu(args, config):
    cohort = _load_cohort(args.in_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arm_records, rows = [], []
    for traj in cohort:
        for onset in _episode_onsets(traj):
            rollouts = generate_action_rollouts(traj, onset)
            for j, (amount, cost) in enumerate(zip(rollouts.actions, rollouts.costs)):
                seq_id = f"{traj.subject.subject_id}-a{onset}-{j}"
                sl = slice(onset, onset + EPISODE_STEPS)
                bolus = traj.bolus_plan[sl].copy()
                bolus[0] += amount
                arm_records.append(_arm_record(traj, seq_id, onset,
                                               rollouts.trajectories[j],
                                               traj.basal_plan[sl], bolus))
                rows.append([traj.subject.subject_id, onset, j, repr(float(amount)),
                             repr(float(cost)), seq_id])
    write_records_csv(arm_records, out / "action_records.csv")
    with (out / ACTION_MANIFEST).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "onset_index", "action_index", "amount_u",
                         "simulator_cost", "seq"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} action-menu rollouts")
    return EXIT_OK


def _cmd_fit(args, config):
    cfg = _run_config(args, config)
    if args.model == "zoh":
        Path(args.out_file).write_text(json.dumps(
            {"format_version": 1, "model": "zoh"}, indent=2) + "\n")
        print("wrote zoh model file")
        return EXIT_OK
    records = read_records_csv(args.in_file, source="real")
    samples = []
    for record in records:
        samples.extend(extract_windows(record, cfg.history_len, cfg.horizon_len,
                                       stride=args.stride))
    params = fit_arx(samples, lag_order=args.lags, ridge_weight=cfg.ridge_weight,
                     action_conditional=args.action_conditional)
    save_params(params, args.out_file)
    print(f"fitted arx on {len(samples)} samples")
    return EXIT_OK


def _cmd_predict(args, config):
    cfg = _run_config(args, config)
    model = _load_model(args.model_file)
    records = read_records_csv(args.in_file, source=args.source)
    with Path(args.out_file).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pat_id", "seq_id", "origin_index", "lead", "prediction"])
        for record in records:
            origins, preds = predict_over_record(model, record, cfg.history_len,
                                                 cfg.horizon_len)
            for i, origin in enumerate(origins):
                for lead in range(cfg.horizon_len):
                    writer.writerow([record.pat_id, record.seq_id, int(origin),
                                     lead + 1, repr(float(preds[i][lead]))])
    print(f"wrote predictions for {len(records)} records")
    return EXIT_OK


def _cmd_eval_forecast(args, config):
    cfg = _run_config(args, config)
    model = _load_model(args.model_file)
    records = read_records_csv(args.in_file, source=args.source)
    leads = tuple(int(v) // 5 for v in (args.leads or "30,60,120").split(","))
    metrics = evaluate_forecast(model, records, cfg.history_len, cfg.horizon_len,
                                leads=leads, slices=cfg.slices)
    reports = forecast_reports(args.model_name, metrics,
                               cfg.bootstrap_resamples, cfg.master_seed)
    emit_report(reports, args.out_dir)
    print(f"wrote {len(reports)} forecast metric rows")
    return EXIT_OK


def _cmd_eval_gating(args, config):
    cfg = _run_config(args, config)
    model = _load_model(args.model_file)
    records = read_records_csv(args.in_file, source=args.source)
    ph_steps = (args.ph // 5) if args.ph is not None else cfg.ph_steps
    gating = evaluate_gating(model, records, cfg.history_len, cfg.horizon_len,
                             ph_steps, cfg.threshold, slices=cfg.slices)
    reports = gating_reports(args.model_name, gating, cfg.bootstrap_resamples,
                             cfg.master_seed, horizon=ph_steps * 5)
    out = Path(args.out_dir)
    emit_report(reports, out)
    with (out / "gating_per_patient.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice", "pat_id", "n_events", "n_detected", "recall",
                         "false_alarms_per_day", "median_lead_minutes"])
        for slice_name in cfg.slices:
            for row in gating[slice_name]:
                writer.writerow([
                    slice_name, row.pat_id, row.n_events, row.n_detected,
                    "" if row.recall is None else repr(row.recall),
                    repr(row.false_alarms_per_day),
                    "" if row.median_lead_minutes is None else repr(row.median_lead_minutes)])
    print(f"wrote gating results for {len(records)} records")
    return EXIT_OK


def _cmd_eval_counterfactual(args, config):
    cfg = _run_config(args, config)
    model = _load_model(args.model_file)
    predictor = make_model_predictor(model, cfg.history_len)
    cohort = _load_cohort(args.in_dir)
    rows = []
    for traj in cohort:
        episodes = generate_paired_episodes(traj)
        rows.extend(evaluate_effect_metrics(traj, episodes, predictor,
                                            leads_min=cfg.leads_min))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "effect_metrics.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "family", "lead_minutes", "effect_rmse",
                         "sign_agreement", "kendall_tau", "n_pairs"])
        for r in rows:
            writer.writerow([
                r.subject_id, r.family, r.lead_minutes,
                "" if r.effect_rmse is None else repr(r.effect_rmse),
                "" if r.sign_agreement is None else repr(r.sign_agreement),
                "" if r.kendall_tau is None else repr(r.kendall_tau), r.n_pairs])
    print(f"wrote effect metrics for {len(cohort)} subjects")
    return EXIT_OK


def _cmd_eval_policy_regret(args, config):
    cfg = _run_config(args, config)
    model = _load_model(args.model_file)
    predictor = make_model_predictor(model, cfg.history_len)
    cohort = _load_cohort(args.in_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "policy_metrics.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "action_match_rate", "mean_regret", "n_episodes"])
        for traj in cohort:
            rollout_sets = [generate_action_rollouts(traj, onset)
                            for onset in _episode_onsets(traj)]
            m = evaluate_action_selection(traj, rollout_sets, predictor)
            writer.writerow([m.subject_id, repr(m.action_match_rate),
                             repr(m.mean_regret), m.n_episodes])
    print(f"wrote policy metrics for {len(cohort)} subjects")
    return EXIT_OK


def _cmd_report(args, config):
    cfg = _run_config(args, config)
    result = run_full(cfg, args.out_dir)
    print(f"wrote {len(result.reports)} metric rows to {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_run_flags(parser, *names):
    flags = {
        "n_subjects": ("--subjects", int, "number of simulated subjects"),
        "days": ("--days", int, "days per simulated subject"),
        "history_len": ("--history", int, "history length in grid steps"),
        "horizon_len": ("--horizon", int, "forecast horizon in grid steps"),
        "threshold": ("--threshold", float, "hypoglycemia threshold, mg/dL"),
        "bootstrap_resamples": ("--resamples", int, "bootstrap resamples"),
        "master_seed": ("--seed", int, "master seed"),
        "ridge_weight": ("--ridge", float, "ridge penalty weight"),
        "slices": ("--slices", str, "comma-separated slice names"),
        "leads": ("--leads", str, "comma-separated lead times, minutes"),
    }
    for name in names:
        flag, kind, help_text = flags[name]
        parser.add_argument(flag, dest=name, type=kind, default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glyceval",
        description="Task-aware evaluation toolkit for glucose forecasting.")
    parser.add_argument("--config", default=None, help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("harmonize", help="raw event CSVs -> harmonized records")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    for f in fields(HarmonizeConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, type=int, default=None)
    p.set_defaults(func=_cmd_harmonize)

    p = sub.add_parser("simulate", help="generate a virtual cohort")
    p.add_argument("--out", dest="out_dir", required=True)
    _add_run_flags(p, "n_subjects", "days", "master_seed")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("make-episodes", help="paired factual/counterfactual episodes")
    p.add_argument("--in", dest="in_dir", required=True, help="simulate output dir")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--families", default="basal,bolus")
    p.set_defaults(func=_cmd_make_episodes)

    p = sub.add_parser("make-action-menu", help="candidate bolus rollouts per onset")
    p.add_argument("--in", dest="in_dir", required=True, help="simulate output dir")
    p.add_argument("--out", dest="out_dir", required=True)
    p.set_defaults(func=_cmd_make_action_menu)

    p = sub.add_parser("fit", help="fit a baseline forecaster")
    p.add_argument("--model", choices=("zoh", "arx"), required=True)
    p.add_argument("--in", dest="in_file", help="harmonized records CSV")
    p.add_argument("--out", dest="out_file", required=True, help="model file")
    p.add_argument("--lags", type=int, default=12)
    p.add_argument("--stride", type=int, default=12)
    p.add_argument("--action-conditional", action="store_true")
    _add_run_flags(p, "history_len", "horizon_len", "ridge_weight")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="forecasts at every valid origin")
    p.add_argument("--model-file", required=True)
    p.add_argument("--in", dest="in_file", required=True)
    p.add_argument("--out", dest="out_file", required=True)
    p.add_argument("--source", default="real", choices=("real", "simulator"))
    _add_run_flags(p, "history_len", "horizon_len")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval-forecast", help="RMSE and unsafe-zone fraction")
    p.add_argument("--model-file", required=True)
    p.add_argument("--model-name", default="model")
    p.add_argument("--in", dest="in_file", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--source", default="real", choices=("real", "simulator"))
    _add_run_flags(p, "history_len", "horizon_len", "slices", "leads",
                   "bootstrap_resamples", "master_seed")
    p.set_defaults(func=_cmd_eval_forecast)

    p = sub.add_parser("eval-gating", help="event-level alarm metrics")
    p.add_argument("--model-file", required=True)
    p.add_argument("--model-name", default="model")
    p.add_argument("--in", dest="in_file", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--source", default="real", choices=("real", "simulator"))
    p.add_argument("--ph", type=int, default=None, help="alarm horizon, minutes")
    _add_run_flags(p, "history_len", "horizon_len", "threshold", "slices",
                   "bootstrap_resamples", "master_seed")
    p.set_defaults(func=_cmd_eval_gating)

    p = sub.add_parser("eval-counterfactual", help="intervention-effect metrics")
    p.add_argument("--model-file", required=True)
    p.add_argument("--in", dest="in_dir", required=True, help="simulate output dir")
    p.add_argument("--out", dest="out_dir", required=True)
    _add_run_flags(p, "history_len", "leads")
    p.set_defaults(func=_cmd_eval_counterfactual)

    p = sub.add_parser("eval-policy-regret", help="action selection under risk cost")
    p.add_argument("--model-file", required=True)
    p.add_argument("--in", dest="in_dir", required=True, help="simulate output dir")
    p.add_argument("--out", dest="out_dir", required=True)
    _add_run_flags(p, "history_len")
    p.set_defaults(func=_cmd_eval_policy_regret)

    p = sub.add_parser("report", help="full benchmark run with report files")
    p.add_argument("--out", dest="out_dir", required=True)
    _add_run_flags(p, "n_subjects", "days", "history_len", "horizon_len",
                   "threshold", "slices", "leads", "bootstrap_resamples",
                   "master_seed", "ridge_weight")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
