"""Event detection, alarm generation, matching, and gating metrics."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyceval.alarms import (
    Alarm,
    HypoEvent,
    detect_events,
    gating_metrics,
    generate_alarms,
    match_alarms,
    tag_event,
)
from glyceval.timeseries import SLICE_NOCTURNAL, SLICE_POST_BOLUS

from conftest import make_record

PH = 6  # 30 minutes on the 5-minute grid


def run_length_events(cgm, threshold=70.0):
    """Independent detector: run-length encode the below-threshold mask, open
    an event at a below-run of length >= 3, close it at the start of the
    next at-or-above run of length >= 3."""
    below = [v < threshold for v in cgm]
    runs = []
    idx = 0
    for key, group in itertools.groupby(below):
        length = len(list(group))
        runs.append((key, idx, length))
        idx += length
    events = []
    onset = None
    for is_below, start, length in runs:
        if onset is None:
            if is_below and length >= 3:
                onset = start
        elif not is_below and length >= 3:
            events.append((onset, start))
            onset = None
    if onset is not None:
        events.append((onset, len(cgm) - 1))
    return events


class TestDetectEvents:
    def test_minimum_duration(self):
        base = np.full(12, 100.0)
        two = base.copy()
        two[4:6] = 60.0
        assert detect_events(two) == []
        three = base.copy()
        three[4:7] = 60.0
        events = detect_events(three)
        assert [(e.onset_index, e.end_index) for e in events] == [(4, 7)]

    def test_short_recovery_does_not_end_event(self):
        cgm = np.full(20, 100.0)
        cgm[3:6] = 60.0
        cgm[6:8] = 80.0   # only 2 samples at or above threshold
        cgm[8:11] = 60.0
        events = detect_events(cgm)
        assert [(e.onset_index, e.end_index) for e in events] == [(3, 11)]

    def test_ongoing_event_at_series_end(self):
        cgm = np.full(10, 100.0)
        cgm[7:] = 60.0
        events = detect_events(cgm)
        assert [(e.onset_index, e.end_index) for e in events] == [(7, 9)]

    def test_two_separate_events(self):
        cgm = np.full(20, 100.0)
        cgm[2:5] = 60.0
        cgm[12:16] = 65.0
        events = detect_events(cgm)
        assert [(e.onset_index, e.end_index) for e in events] == [(2, 5), (12, 16)]

    def test_threshold_is_strict(self):
        cgm = np.full(10, 70.0)
        assert detect_events(cgm) == []

    def test_matches_run_length_oracle_on_random_series(self, rng):
        # mostly threshold-adjacent values so runs of every length occur
        for _ in range(10_000):
            n = int(rng.integers(1, 201))
            cgm = rng.choice([60.0, 65.0, 69.9, 70.0, 75.0, 120.0], size=n)
            got = [(e.onset_index, e.end_index) for e in detect_events(cgm)]
            assert got == run_length_events(cgm)


def brute_force_alarms(candidates, origins, ph_steps):
    fired, last = [], None
    for origin, fire in zip(origins, candidates):
        if fire and (last is None or origin - last >= ph_steps):
            fired.append(origin)
            last = origin
    return fired


class TestGenerateAlarms:
    def _preds(self, fire_mask):
        preds = np.full((len(fire_mask), PH), 100.0)
        preds[np.asarray(fire_mask, dtype=bool), 0] = 60.0
        return preds

    def test_fires_on_any_lead_below_threshold(self):
        preds = np.full((1, PH), 100.0)
        preds[0, PH - 1] = 69.0
        assert len(generate_alarms(preds, [0], PH)) == 1

    def test_ignores_leads_past_horizon(self):
        preds = np.full((1, PH + 4), 100.0)
        preds[0, PH] = 60.0  # lead PH+1, outside the alarm horizon
        assert generate_alarms(preds, [0], PH) == []

    def test_refractory_suppression(self):
        mask = np.ones(15, dtype=bool)
        alarms = generate_alarms(self._preds(mask), np.arange(15), PH)
        assert [a.time_index for a in alarms] == [0, 6, 12]

    @given(st.lists(st.booleans(), min_size=1, max_size=60),
           st.integers(1, 10))
    @settings(max_examples=300, deadline=None)
    def test_spacing_invariant_and_oracle_match(self, mask, ph):
        preds = np.full((len(mask), ph), 100.0)
        preds[np.asarray(mask, dtype=bool), 0] = 60.0
        origins = np.arange(len(mask))
        alarms = [a.time_index for a in generate_alarms(preds, origins, ph)]
        assert alarms == brute_force_alarms(mask, origins, ph)
        assert all(b - a >= ph for a, b in zip(alarms, alarms[1:]))
        # every fired alarm was a candidate
        assert all(mask[t] for t in alarms)

    def test_rejects_short_window(self):
        with pytest.raises(ValueError):
            generate_alarms(np.full((1, PH - 1), 100.0), [0], PH)


class TestMatchAlarms:
    def _event(self, onset=20, end=26):
        return HypoEvent(onset_index=onset, end_index=end)

    def test_detection_window_is_exactly_pre_onset(self):
        # alarm at every single offset, one at a time
        for offset in range(-PH - 2, 9):
            event = self._event()
            detected, unmatched = match_alarms(
                [Alarm(time_index=20 + offset)], [event], PH)
            should_detect = -PH <= offset <= -1
            assert bool(detected) == should_detect, offset
            # alarms inside [onset - PH, end] never count as false
            should_be_false = not (-PH <= offset <= 6)
            assert bool(unmatched) == should_be_false, offset

    def test_lead_alarm_is_earliest_in_window(self):
        event = self._event()
        alarms = [Alarm(time_index=t) for t in (14, 16, 19)]
        detected, unmatched = match_alarms(alarms, [event], PH)
        assert detected[0][1].time_index == 14
        assert unmatched == []

    def test_alarm_matches_at_most_one_event(self):
        first = HypoEvent(onset_index=10, end_index=14)
        second = HypoEvent(onset_index=16, end_index=20)
        # alarm at 12: inside the first event, also in the second's pre-window
        detected, unmatched = match_alarms([Alarm(time_index=12)], [first, second], PH)
        assert detected == []          # consumed by the earlier event, not a lead
        assert unmatched == []

    def test_hand_traced_lead_25_minutes(self):
        # alarm 5 grid steps before onset: detected with a 25-minute lead
        event = self._event(onset=20, end=26)
        detected, unmatched = match_alarms([Alarm(time_index=15)], [event], PH)
        assert len(detected) == 1 and unmatched == []
        result = gating_metrics(detected, unmatched, [event],
                                total_duration_s=86_400.0)
        assert result.recall == 1.0
        assert result.median_lead_minutes == pytest.approx(25.0)

    def test_hand_traced_onset_coincident_alarm_is_not_detection(self):
        # alarm exactly at onset: too late to warn, but not a false alarm
        event = self._event(onset=20, end=26)
        detected, unmatched = match_alarms([Alarm(time_index=20)], [event], PH)
        assert detected == [] and unmatched == []
        result = gating_metrics(detected, unmatched, [event],
                                total_duration_s=86_400.0)
        assert result.recall == 0.0
        assert result.false_alarms_per_day == 0.0
        assert result.median_lead_minutes is None


class TestGatingMetrics:
    def test_false_alarm_rate_per_day(self):
        unmatched = [Alarm(time_index=t) for t in (5, 50, 500)]
        result = gating_metrics([], unmatched, [], total_duration_s=2 * 86_400.0)
        assert result.false_alarms_per_day == pytest.approx(1.5)
        assert result.recall is None  # no events: recall absent, not zero

    def test_median_lead(self):
        events = [HypoEvent(onset_index=o, end_index=o + 4) for o in (20, 40, 60)]
        detected = [(events[0], Alarm(time_index=19)),
                    (events[1], Alarm(time_index=36)),
                    (events[2], Alarm(time_index=54))]
        result = gating_metrics(detected, [], events, total_duration_s=86_400.0)
        assert result.recall == 1.0
        assert result.median_lead_minutes == pytest.approx(20.0)

    def test_rejects_zero_duration(self):
        with pytest.raises(ValueError):
            gating_metrics([], [], [], total_duration_s=0.0)


class TestTagEvent:
    def test_tags_evaluated_at_onset(self):
        bolus = np.zeros(80)
        bolus[10] = 3.0
        rec = make_record(np.full(80, 100.0), bolus=bolus)  # starts at midnight
        tagged = tag_event(HypoEvent(onset_index=15, end_index=20), rec)
        assert SLICE_POST_BOLUS in tagged.slice_tags
        assert SLICE_NOCTURNAL in tagged.slice_tags  # 01:15 local
        late = tag_event(HypoEvent(onset_index=30, end_index=35), rec)
        assert SLICE_POST_BOLUS not in late.slice_tags  # bolus > 60 min earlier
