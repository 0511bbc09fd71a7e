"""Raw event logs -> harmonized SequenceRecords.

Per-subject pipeline: CGM dedup, gap segmentation, resampling to the
5-minute grid, basal/bolus/weight/meal alignment, no-bolus span filtering,
and minimum-length filtering. Also owns the harmonized CSV schema:

    pat_id, seq_id, date, cgm, basal, bolus_standard, bolus_extended,
    weight_kg, meal
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .timeseries import GRID_STEP_S, SequenceRecord, TimeGrid, interpolate_to_grid, split_on_gaps

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "pat_id", "seq_id", "date", "cgm", "basal",
    "bolus_standard", "bolus_extended", "weight_kg", "meal",
]

BOLUS_KINDS = ("standard", "extended")


@dataclass(frozen=True)
class RawCohortEvents:
    """Output contract of the (out-of-scope) vendor parsers, one subject.

    Each record list holds (timestamp_s, value) tuples; bolus records are
    (timestamp_s, amount_u, kind) with kind in {standard, extended}.
    """

    cgm_records: List[Tuple[int, float]] = field(default_factory=list)
    basal_records: List[Tuple[int, float]] = field(default_factory=list)
    bolus_records: List[Tuple[int, float, str]] = field(default_factory=list)
    meal_records: List[Tuple[int, float]] = field(default_factory=list)
    weight_records: List[Tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        for t, v, kind in self.bolus_records:
            if kind not in BOLUS_KINDS:
                raise ValueError(f"unknown bolus kind {kind!r}")
        for name in ("cgm_records", "basal_records", "meal_records", "weight_records"):
            for t, v in getattr(self, name):
                if not np.isfinite(v):
                    raise ValueError(f"non-finite value in {name}")


@dataclass(frozen=True)
class HarmonizeConfig:
    """Preprocessing thresholds; defaults match the standard parameterization."""

    dedup_tolerance_s: int = 15
    gap_threshold_s: int = 1_800
    grid_step_s: int = GRID_STEP_S
    basal_lookback_s: int = 3 * 3_600
    basal_lookahead_s: int = 15
    bolus_window_before_s: int = 285
    bolus_window_after_s: int = 15
    max_no_bolus_span_s: Optional[int] = 12 * 3_600
    min_segment_steps: int = 312

    def __post_init__(self):
        for name in ("dedup_tolerance_s", "gap_threshold_s", "grid_step_s",
                     "basal_lookback_s", "basal_lookahead_s",
                     "bolus_window_before_s", "bolus_window_after_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.min_segment_steps <= 0:
            raise ValueError("min_segment_steps must be positive")


@dataclass
class PipelineDiagnostics:
    """Structured drop counts per reason, for pipeline debugging."""

    counts: Counter = field(default_factory=Counter)

    def bump(self, reason: str, n: int = 1):
        self.counts[reason] += n


def dedup_cgm(cgm_records, tolerance_s: int = 15):
    """Collapse clusters of near-duplicate CGM records, keeping the latest.

    Greedy left-to-right chaining: a record within ``tolerance_s`` of the
    current cluster's last member joins the cluster.
    """
    records = sorted(cgm_records, key=lambda r: r[0])
    if not records:
        return []
    out = []
    cluster_last = records[0]
    for rec in records[1:]:
        if rec[0] - cluster_last[0] <= tolerance_s:
            cluster_last = rec
        else:
            out.append(cluster_last)
            cluster_last = rec
    out.append(cluster_last)
    return out


def align_basal(basal_records, grid: TimeGrid, lookback_s: int = 3 * 3_600,
                lookahead_s: int = 15) -> np.ndarray:
    """Piecewise-constant basal channel on the grid.

    Value at t is the rate of the latest record in [t - lookback, t + lookahead];
    gaps are forward-filled, starting from zero before the first record.
    """
    records = sorted(basal_records, key=lambda r: r[0])
    times = grid.times()
    channel = np.zeros(grid.n_steps)
    last = 0.0
    latest = None  # latest record with time <= t + lookahead
    j = 0
    for i, t in enumerate(times):
        while j < len(records) and records[j][0] <= t + lookahead_s:
            latest = records[j]
            j += 1
        if latest is not None and latest[0] >= t - lookback_s:
            last = latest[1]
        # else: forward-fill the previous value
        channel[i] = last
    return channel


def align_bolus(bolus_records, grid: TimeGrid, before_s: int = 285, after_s: int = 15,
                diagnostics: Optional[PipelineDiagnostics] = None):
    """Sparse bolus channels (standard, extended) on the grid.

    Each raw record is assigned to the earliest grid point t with
    timestamp in [t - before, t + after]; with before + after equal to the
    grid step the windows tile the axis, so no record lands twice.
    """
    standard = np.zeros(grid.n_steps)
    extended = np.zeros(grid.n_steps)
    step = grid.step
    for t_rec, amount, kind in bolus_records:
        offset = t_rec - after_s - grid.start_time
        idx = int(np.ceil(offset / step))
        t_grid = grid.start_time + idx * step
        if idx < 0 or idx >= grid.n_steps or t_grid - before_s > t_rec:
            if diagnostics is not None:
                diagnostics.bump("bolus_outside_segment")
            continue
        (standard if kind == "standard" else extended)[idx] += amount
    return standard, extended


def align_events(event_records, grid: TimeGrid, before_s: int = 285, after_s: int = 15,
                 diagnostics: Optional[PipelineDiagnostics] = None,
                 reason: str = "meal_outside_segment") -> np.ndarray:
    """Same tiling-window assignment as boluses, for a single event channel."""
    channel = np.zeros(grid.n_steps)
    step = grid.step
    for t_rec, amount in event_records:
        offset = t_rec - after_s - grid.start_time
        idx = int(np.ceil(offset / step))
        t_grid = grid.start_time + idx * step
        if idx < 0 or idx >= grid.n_steps or t_grid - before_s > t_rec:
            if diagnostics is not None:
                diagnostics.bump(reason)
            continue
        channel[idx] += amount
    return channel


def align_weight(weight_records, grid: TimeGrid) -> Optional[np.ndarray]:
    """Linear interpolation between weight measurements, constant outside."""
    records = sorted(weight_records, key=lambda r: r[0])
    if not records:
        return None
    times = np.array([r[0] for r in records], dtype=float)
    values = np.array([r[1] for r in records], dtype=float)
    return np.interp(grid.times().astype(float), times, values)


def filter_no_bolus_spans(record: SequenceRecord, max_span_s: Optional[int]):
    """Drop grid spans where time since the last nonzero bolus exceeds the cap.

    The clock starts at record start; surviving contiguous pieces become
    separate records (re-identified downstream).
    """
    if max_span_s is None:
        return [record]
    times = record.grid.times()
    bolus = record.bolus
    keep = np.ones(record.n_steps, dtype=bool)
    last_bolus_time = int(times[0])
    for i, t in enumerate(times):
        if bolus[i] > 0:
            last_bolus_time = int(t)
        elif t - last_bolus_time > max_span_s:
            keep[i] = False
    if np.all(keep):
        return [record]
    return _split_by_mask(record, keep)


def _split_by_mask(record: SequenceRecord, keep: np.ndarray):
    pieces = []
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return pieces
    breaks = np.flatnonzero(np.diff(idx) > 1) + 1
    for chunk in np.split(idx, breaks):
        grid = TimeGrid(record.grid.time_at(int(chunk[0])), record.grid.step, len(chunk))
        sl = slice(int(chunk[0]), int(chunk[-1]) + 1)
        pieces.append(replace(
            record,
            grid=grid,
            cgm=record.cgm[sl],
            basal=record.basal[sl],
            bolus_standard=record.bolus_standard[sl],
            bolus_extended=record.bolus_extended[sl],
            meal=record.meal[sl],
            weight=None if record.weight is None else record.weight[sl],
        ))
    return pieces


def harmonize_subject(pat_id: str, events: RawCohortEvents, config: HarmonizeConfig,
                      diagnostics: Optional[PipelineDiagnostics] = None):
    """Run the full per-subject pipeline. Returns unlabeled records."""
    diagnostics = diagnostics if diagnostics is not None else PipelineDiagnostics()
    cgm = dedup_cgm(events.cgm_records, config.dedup_tolerance_s)
    if not cgm:
        return []
    timestamps = np.array([r[0] for r in cgm], dtype=np.int64)
    values = np.array([r[1] for r in cgm], dtype=float)
    records = []
    for seg_times, seg_values in split_on_gaps(timestamps, values, config.gap_threshold_s):
        resampled = interpolate_to_grid(seg_times, seg_values, config.grid_step_s)
        if resampled is None:
            diagnostics.bump("segment_too_few_observations")
            continue
        grid, cgm_channel = resampled
        if np.any(cgm_channel <= 0):
            diagnostics.bump("segment_nonpositive_cgm")
            continue
        basal = align_basal(events.basal_records, grid,
                            config.basal_lookback_s, config.basal_lookahead_s)
        bolus_std, bolus_ext = align_bolus(
            events.bolus_records, grid,
            config.bolus_window_before_s, config.bolus_window_after_s, diagnostics)
        meal = align_events(events.meal_records, grid,
                            config.bolus_window_before_s, config.bolus_window_after_s,
                            diagnostics, reason="meal_outside_segment")
        weight = align_weight(events.weight_records, grid)
        record = SequenceRecord(
            pat_id=pat_id, seq_id="", grid=grid, cgm=cgm_channel, basal=basal,
            bolus_standard=bolus_std, bolus_extended=bolus_ext, meal=meal, weight=weight)
        for piece in filter_no_bolus_spans(record, config.max_no_bolus_span_s):
            if piece.n_steps >= config.min_segment_steps:
                records.append(piece)
            else:
                diagnostics.bump("segment_below_min_length")
    return records


def run_pipeline(cohort: Dict[str, RawCohortEvents],
                 config: HarmonizeConfig = HarmonizeConfig()):
    """Harmonize a whole cohort; per-subject failures are logged, not fatal.

    Returns (records, diagnostics). seq_ids are unique cohort-wide and
    deterministic: assigned by sorted (pat_id, segment start time).
    """
    diagnostics = PipelineDiagnostics()
    all_records = []
    for pat_id in sorted(cohort):
        try:
            all_records.extend(harmonize_subject(pat_id, cohort[pat_id], config, diagnostics))
        except Exception:
            logger.exception("harmonization failed for subject %s", pat_id)
            diagnostics.bump("subject_failed")
    all_records.sort(key=lambda r: (r.pat_id, r.grid.start_time))
    all_records = [rec.with_seq_id(f"seq{i:05d}") for i, rec in enumerate(all_records)]
    return all_records, diagnostics


def _format_date(timestamp: int) -> str:
    return datetime.fromtimestamp(int(timestamp), tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S")


def _parse_date(text: str) -> int:
    dt = datetime.strptime(text, "%Y-%m-%d %H:%M:%S").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def write_records_csv(records: Sequence[SequenceRecord], path):
    """Write harmonized records in the common CSV schema."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            times = rec.grid.times()
            for i in range(rec.n_steps):
                writer.writerow([
                    rec.pat_id, rec.seq_id, _format_date(times[i]),
                    _num(rec.cgm[i]), _num(rec.basal[i]),
                    _num(rec.bolus_standard[i]), _num(rec.bolus_extended[i]),
                    _num(rec.weight[i]) if rec.weight is not None else "",
                    _num(rec.meal[i]),
                ])


def _num(x: float) -> str:
    return repr(float(x))


def read_records_csv(path, source: str = "real"):
    """Read harmonized CSV back into SequenceRecords."""
    path = Path(path)
    groups: Dict[Tuple[str, str], list] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"CSV missing columns: {sorted(missing)}")
        for row in reader:
            groups.setdefault((row["pat_id"], row["seq_id"]), []).append(row)
    records = []
    for (pat_id, seq_id), rows in sorted(groups.items()):
        rows.sort(key=lambda r: r["date"])
        times = np.array([_parse_date(r["date"]) for r in rows], dtype=np.int64)
        steps = np.diff(times)
        step = int(steps[0]) if steps.size else GRID_STEP_S
        if steps.size and not np.all(steps == step):
            raise ValueError(f"irregular grid in sequence {seq_id}")
        grid = TimeGrid(int(times[0]), step, len(rows))
        weights = [r["weight_kg"] for r in rows]
        has_weight = all(w != "" for w in weights)
        records.append(SequenceRecord(
            pat_id=pat_id, seq_id=seq_id, grid=grid,
            cgm=np.array([float(r["cgm"]) for r in rows]),
            basal=np.array([float(r["basal"]) for r in rows]),
            bolus_standard=np.array([float(r["bolus_standard"]) for r in rows]),
            bolus_extended=np.array([float(r["bolus_extended"]) for r in rows]),
            meal=np.array([float(r["meal"]) for r in rows]),
            weight=np.array([float(w) for w in weights]) if has_weight else None,
            source=source,
        ))
    return records


RAW_CHANNEL_FILES = {
    "cgm": ("cgm.csv", ["pat_id", "timestamp_s", "value"]),
    "basal": ("basal.csv", ["pat_id", "timestamp_s", "value"]),
    "bolus": ("bolus.csv", ["pat_id", "timestamp_s", "value", "kind"]),
    "meal": ("meal.csv", ["pat_id", "timestamp_s", "value"]),
    "weight": ("weight.csv", ["pat_id", "timestamp_s", "value"]),
}


def read_raw_events_dir(path) -> Dict[str, RawCohortEvents]:
    """Read a directory of per-channel raw event CSVs into a cohort.

    Expected files (cgm.csv required, the rest optional):
    cgm/basal/meal/weight.csv with columns pat_id, timestamp_s, value and
    bolus.csv with pat_id, timestamp_s, value, kind in {standard, extended}.
    """
    path = Path(path)
    per_channel: Dict[str, Dict[str, list]] = {name: {} for name in RAW_CHANNEL_FILES}
    for channel, (filename, columns) in RAW_CHANNEL_FILES.items():
        file_path = path / filename
        if not file_path.exists():
            if channel == "cgm":
                raise ValueError(f"missing required raw events file {filename}")
            continue
        with file_path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(columns) - set(reader.fieldnames or [])
            if missing:
                raise ValueError(f"{filename} missing columns: {sorted(missing)}")
            for row in reader:
                entry = (int(row["timestamp_s"]), float(row["value"]))
                if channel == "bolus":
                    entry = entry + (row["kind"],)
                per_channel[channel].setdefault(row["pat_id"], []).append(entry)
    pat_ids = sorted(set().union(*(per_channel[c].keys() for c in per_channel)))
    return {
        pat_id: RawCohortEvents(
            cgm_records=per_channel["cgm"].get(pat_id, []),
            basal_records=per_channel["basal"].get(pat_id, []),
            bolus_records=per_channel["bolus"].get(pat_id, []),
            meal_records=per_channel["meal"].get(pat_id, []),
            weight_records=per_channel["weight"].get(pat_id, []),
        )
        for pat_id in pat_ids
    }


def write_raw_events_dir(cohort: Dict[str, RawCohortEvents], path):
    """Inverse of read_raw_events_dir; used by the demos and tests."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for channel, (filename, columns) in RAW_CHANNEL_FILES.items():
        attr = f"{channel}_records"
        with (path / filename).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for pat_id in sorted(cohort):
                for entry in getattr(cohort[pat_id], attr):
                    writer.writerow([pat_id, *entry])


def records_to_raw_events(records: Sequence[SequenceRecord]) -> Dict[str, RawCohortEvents]:
    """View harmonized records as raw events (used for idempotence checks)."""
    cohort: Dict[str, RawCohortEvents] = {}
    by_pat: Dict[str, list] = {}
    for rec in records:
        by_pat.setdefault(rec.pat_id, []).append(rec)
    for pat_id, recs in by_pat.items():
        cgm, basal, bolus, meal, weight = [], [], [], [], []
        for rec in sorted(recs, key=lambda r: r.grid.start_time):
            times = rec.grid.times()
            for i in range(rec.n_steps):
                t = int(times[i])
                cgm.append((t, float(rec.cgm[i])))
                basal.append((t, float(rec.basal[i])))
                if rec.bolus_standard[i] > 0:
                    bolus.append((t, float(rec.bolus_standard[i]), "standard"))
                if rec.bolus_extended[i] > 0:
                    bolus.append((t, float(rec.bolus_extended[i]), "extended"))
                if rec.meal[i] > 0:
                    meal.append((t, float(rec.meal[i])))
                if rec.weight is not None:
                    weight.append((t, float(rec.weight[i])))
        cohort[pat_id] = RawCohortEvents(cgm, basal, bolus, meal, weight)
    return cohort
