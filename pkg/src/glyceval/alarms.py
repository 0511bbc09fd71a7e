"""Hypoglycemia event detection, alarm generation, matching, and gating metrics.

An event is >= 3 consecutive 5-minute samples below 70 mg/dL, onset at the
first sample of the qualifying run; it ends at the first sample of a run of
>= 3 consecutive samples at or above 70 mg/dL. Alarms fire from the full
PH-minute forecast window under a refractory rule of length PH, and an
event counts as detected when an alarm lands in [t0 - PH, t0 - step].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .timeseries import (
    POST_BOLUS_WINDOW_S,
    SLICE_NOCTURNAL,
    SLICE_OVERALL,
    SLICE_POST_BOLUS,
    SequenceRecord,
    is_nocturnal,
)

HYPO_THRESHOLD_MGDL = 70.0
MIN_RUN_SAMPLES = 3  # 15 minutes at the 5-minute grid


@dataclass(frozen=True)
class HypoEvent:
    """Detected ground-truth hypoglycemic event on one record's grid."""

    onset_index: int
    end_index: int
    pat_id: str = ""
    slice_tags: frozenset = field(default_factory=lambda: frozenset({SLICE_OVERALL}))


@dataclass
class Alarm:
    """One fired alarm at a forecast-origin grid index."""

    time_index: int
    pat_id: str = ""
    matched_event: Optional[HypoEvent] = None


@dataclass(frozen=True)
class GatingResult:
    """Per-patient operational gating metrics."""

    pat_id: str
    n_events: int
    n_detected: int
    n_false_alarms: int
    recall: Optional[float]
    false_alarms_per_day: float
    median_lead_minutes: Optional[float]


def detect_events(cgm: Sequence[float], threshold: float = HYPO_THRESHOLD_MGDL) -> List[HypoEvent]:
    """Scan a gridded series for hypoglycemic events.

    An ongoing sub-threshold run at series end still qualifies (end at the
    last index); a short recovery of fewer than 3 samples does not end an
    event.
    """
    cgm = np.asarray(cgm, dtype=float)
    n = cgm.size
    below = cgm < threshold
    events = []
    i = 0
    while i + MIN_RUN_SAMPLES <= n:
        if below[i] and below[i + 1] and below[i + 2]:
            onset = i
            end = None
            j = i + MIN_RUN_SAMPLES
            while j + MIN_RUN_SAMPLES <= n:
                if not below[j] and not below[j + 1] and not below[j + 2]:
                    end = j
                    break
                j += 1
            if end is None:
                end = n - 1
                i = n
            else:
                i = end  # next onset can only begin after the recovery run
            events.append(HypoEvent(onset_index=onset, end_index=end))
        else:
            i += 1
    return events


def tag_event(event: HypoEvent, record: SequenceRecord, utc_offset_s: int = 0) -> HypoEvent:
    """Attach slice tags: the slice predicates evaluated at event onset."""
    onset_time = record.grid.time_at(event.onset_index)
    times = record.grid.times()
    tags = {SLICE_OVERALL}
    window = (times > onset_time - POST_BOLUS_WINDOW_S) & (times <= onset_time)
    if np.any(record.bolus[window] > 0):
        tags.add(SLICE_POST_BOLUS)
    if is_nocturnal(onset_time, utc_offset_s):
        tags.add(SLICE_NOCTURNAL)
    return HypoEvent(event.onset_index, event.end_index, record.pat_id, frozenset(tags))


def generate_alarms(predictions: np.ndarray, origin_indices: Sequence[int], ph_steps: int,
                    threshold: float = HYPO_THRESHOLD_MGDL, pat_id: str = "") -> List[Alarm]:
    """Alarms from per-origin forecast windows with refractory suppression.

    ``predictions[i]`` holds the forecast over leads 1..ph_steps issued at
    ``origin_indices[i]``. A candidate fires when any lead dips below the
    threshold; candidates within ph_steps of the last fired alarm are
    suppressed.
    """
    predictions = np.asarray(predictions, dtype=float)
    origin_indices = np.asarray(origin_indices, dtype=int)
    if predictions.ndim != 2 or predictions.shape[0] != origin_indices.size:
        raise ValueError("predictions must be (n_origins, >=ph_steps)")
    if predictions.shape[1] < ph_steps:
        raise ValueError("forecast window shorter than alarm horizon")
    candidates = np.min(predictions[:, :ph_steps], axis=1) < threshold
    alarms: List[Alarm] = []
    last_fired = None
    for origin, fire in zip(origin_indices, candidates):
        if not fire:
            continue
        if last_fired is not None and origin - last_fired < ph_steps:
            continue
        alarms.append(Alarm(time_index=int(origin), pat_id=pat_id))
        last_fired = origin
    return alarms


def match_alarms(alarms: Sequence[Alarm], events: Sequence[HypoEvent],
                 ph_steps: int) -> Tuple[List[Tuple[HypoEvent, Alarm]], List[Alarm]]:
    """Match alarms to events.

    An event is detected when an alarm lies in [onset - ph_steps, onset - 1];
    the lead alarm is the earliest such alarm. Alarms anywhere inside
    [onset - ph_steps, end] are marked matched (alarms during an ongoing
    event are not penalized as false). Each alarm matches at most one event,
    the earliest containing one.
    """
    detected: List[Tuple[HypoEvent, Alarm]] = []
    alarms = sorted(alarms, key=lambda a: a.time_index)
    for alarm in alarms:
        alarm.matched_event = None
    events = sorted(events, key=lambda e: e.onset_index)
    for event in events:
        lead_alarm = None
        for alarm in alarms:
            if alarm.matched_event is not None:
                continue
            if event.onset_index - ph_steps <= alarm.time_index <= event.end_index:
                alarm.matched_event = event
                in_pre_window = alarm.time_index <= event.onset_index - 1
                if in_pre_window and lead_alarm is None:
                    lead_alarm = alarm
        if lead_alarm is not None:
            detected.append((event, lead_alarm))
    unmatched = [a for a in alarms if a.matched_event is None]
    return detected, unmatched


def gating_metrics(detected: Sequence[Tuple[HypoEvent, Alarm]], unmatched: Sequence[Alarm],
                   events: Sequence[HypoEvent], total_duration_s: float,
                   step_s: int = 300, pat_id: str = "") -> GatingResult:
    """Per-patient recall, false alarms per day, and median warning lead."""
    if total_duration_s <= 0:
        raise ValueError("recorded duration must be positive")
    n_events = len(events)
    n_detected = len(detected)
    recall = n_detected / n_events if n_events else None
    days = total_duration_s / 86_400.0
    leads = [
        (event.onset_index - alarm.time_index) * step_s / 60.0
        for event, alarm in detected
    ]
    return GatingResult(
        pat_id=pat_id,
        n_events=n_events,
        n_detected=n_detected,
        n_false_alarms=len(unmatched),
        recall=recall,
        false_alarms_per_day=len(unmatched) / days,
        median_lead_minutes=float(np.median(leads)) if leads else None,
    )
