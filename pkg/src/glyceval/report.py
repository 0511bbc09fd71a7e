"""Patient-level aggregation, bootstrap CIs, and report emission.

Everything downstream of the metric modules: strict macro-averaging over
patients, subject-level percentile bootstrap intervals, and deterministic
report files (summary JSON, long-format metric CSV, Pareto plot-data CSV).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

DEFAULT_BOOTSTRAP_RESAMPLES = 1_000


@dataclass(frozen=True)
class MetricReport:
    """One macro-averaged metric with its bootstrap interval."""

    metric: str
    per_patient: Dict[str, Optional[float]]
    macro_mean: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]
    n_patients: int
    slice_name: str = "overall"
    horizon: Optional[int] = None
    model: str = ""


@dataclass(frozen=True)
class RunConfig:
    """Full configuration of an end-to-end benchmark run.

    The master seed fans out to per-stage seeds through
    ``numpy.random.SeedSequence([master_seed, stage_index])`` so stages can
    run in parallel yet stay deterministic.
    """

    n_subjects: int = 10
    days: int = 15
    history_len: int = 288
    horizon_len: int = 24
    ph_steps: int = 6
    threshold: float = 70.0
    slices: Tuple[str, ...] = ("overall", "post_bolus", "nocturnal")
    leads_min: Tuple[int, ...] = (30, 60, 120)
    bootstrap_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES
    master_seed: int = 0
    ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    ridge_weight: float = 30.0

    def stage_seed(self, stage: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.master_seed, stage])


def macro_average(per_patient: Dict[str, Optional[float]]) -> Optional[float]:
    """Unweighted mean over patients with a defined value; None when none."""
    values = [v for v in per_patient.values() if v is not None]
    if not values:
        return None
    return float(np.mean(values))


def bootstrap_ci(per_patient_values: Sequence[float],
                 resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES,
                 seed: int = 0, level: float = 0.95) -> Tuple[float, float]:
    """Percentile bootstrap interval for the macro mean, resampling patients
    with replacement. n=1 collapses to a degenerate interval."""
    values = np.asarray([v for v in per_patient_values if v is not None], dtype=float)
    if values.size == 0:
        raise ValueError("no defined values to bootstrap")
    if values.size == 1:
        return float(values[0]), float(values[0])
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    return float(low), float(high)


def build_report(metric: str, per_patient: Dict[str, Optional[float]],
                 resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES, seed: int = 0,
                 slice_name: str = "overall", horizon: Optional[int] = None,
                 model: str = "") -> MetricReport:
    mean = macro_average(per_patient)
    defined = [v for v in per_patient.values() if v is not None]
    if mean is None:
        low = high = None
    else:
        low, high = bootstrap_ci(defined, resamples, seed)
    return MetricReport(metric=metric, per_patient=dict(per_patient), macro_mean=mean,
                        ci_low=low, ci_high=high, n_patients=len(defined),
                        slice_name=slice_name, horizon=horizon, model=model)


def pareto_points(points: Dict[str, Tuple[float, float]]):
    """Dominance flags for (recall, false-alarms/day) model points.

    A point is dominated when another model has strictly higher recall and
    strictly lower alarm burden.
    """
    rows = []
    for name, (recall, fa) in sorted(points.items()):
        dominated = any(
            other != name and o_recall > recall and o_fa < fa
            for other, (o_recall, o_fa) in points.items()
        )
        rows.append({"model": name, "recall": recall, "fa_per_day": fa,
                     "dominated": dominated})
    return rows


def emit_report(reports: Sequence[MetricReport], out_dir,
                pareto: Optional[Dict[str, Tuple[float, float]]] = None):
    """Write summary.json, metrics.csv and (optionally) pareto.csv.

    Output is deterministic: fixed ordering, fixed float formatting.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def fmt(x):
        return "" if x is None else repr(float(x))

    metrics_path = out_dir / "metrics.csv"
    with metrics_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "slice", "horizon", "metric",
                         "macro_mean", "ci_low", "ci_high", "n_patients"])
        for rep in sorted(reports, key=lambda r: (r.model, r.slice_name,
                                                  str(r.horizon), r.metric)):
            writer.writerow([rep.model, rep.slice_name,
                             "" if rep.horizon is None else rep.horizon, rep.metric,
                             fmt(rep.macro_mean), fmt(rep.ci_low), fmt(rep.ci_high),
                             rep.n_patients])

    summary = {
        "reports": [
            {
                "model": rep.model, "slice": rep.slice_name, "horizon": rep.horizon,
                "metric": rep.metric, "macro_mean": rep.macro_mean,
                "ci_low": rep.ci_low, "ci_high": rep.ci_high,
                "n_patients": rep.n_patients,
                "per_patient": {k: rep.per_patient[k] for k in sorted(rep.per_patient)},
            }
            for rep in sorted(reports, key=lambda r: (r.model, r.slice_name,
                                                      str(r.horizon), r.metric))
        ]
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    if pareto is not None:
        with (out_dir / "pareto.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "recall", "fa_per_day", "dominated"])
            for row in pareto_points(pareto):
                writer.writerow([row["model"], fmt(row["recall"]),
                                 fmt(row["fa_per_day"]), int(row["dominated"])])
    return metrics_path
