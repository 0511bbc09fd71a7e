"""Gridded multichannel glucose/insulin time series.

Canonical representation used everywhere else in the toolkit: a uniform
5-minute grid per contiguous segment, with glucose plus sparse action
channels. Also houses gap segmentation, sliding-window extraction,
slice tagging, and patient-level splitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

GRID_STEP_S = 300
"""Default grid step: 5 minutes, in seconds."""

SECONDS_PER_DAY = 86_400

SLICE_OVERALL = "overall"
SLICE_POST_BOLUS = "post_bolus"
SLICE_NOCTURNAL = "nocturnal"

POST_BOLUS_WINDOW_S = 3_600
"""Bolus within the preceding 60 minutes of the origin => post-bolus sample."""

NOCTURNAL_START_S = 0
NOCTURNAL_END_S = 6 * 3_600
"""Nocturnal slice: local clock time in [00:00, 06:00)."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid: integer epoch seconds, fixed step."""

    start_time: int
    step: int = GRID_STEP_S
    n_steps: int = 0

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")

    def times(self) -> np.ndarray:
        return self.start_time + self.step * np.arange(self.n_steps, dtype=np.int64)

    def time_at(self, index: int) -> int:
        return self.start_time + self.step * int(index)


@dataclass(frozen=True)
class SequenceRecord:
    """One contiguous gridded segment for one subject.

    Channels share the grid length. ``bolus_standard`` and
    ``bolus_extended`` are kept separate so the harmonized CSV schema can
    be round-tripped; ``bolus`` exposes their sum.
    """

    pat_id: str
    seq_id: str
    grid: TimeGrid
    cgm: np.ndarray
    basal: np.ndarray
    bolus_standard: np.ndarray
    bolus_extended: np.ndarray
    meal: np.ndarray
    weight: Optional[np.ndarray] = None
    source: str = "real"

    def __post_init__(self):
        n = self.grid.n_steps
        for name in ("cgm", "basal", "bolus_standard", "bolus_extended", "meal"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"channel {name} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, name, arr)
        if self.weight is not None:
            w = np.asarray(self.weight, dtype=float)
            if w.shape != (n,):
                raise ValueError("weight channel length mismatch")
            object.__setattr__(self, "weight", w)
        if not np.all(np.isfinite(self.cgm)) or np.any(self.cgm <= 0):
            raise ValueError("cgm values must be finite and positive")
        if np.any(self.bolus_standard < 0) or np.any(self.bolus_extended < 0) or np.any(self.meal < 0):
            raise ValueError("bolus and meal channels must be non-negative")

    @property
    def bolus(self) -> np.ndarray:
        return self.bolus_standard + self.bolus_extended

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    def with_seq_id(self, seq_id: str) -> "SequenceRecord":
        return replace(self, seq_id=seq_id)


@dataclass(frozen=True)
class ForecastSample:
    """One (history, target, planned actions) evaluation unit."""

    record: SequenceRecord
    origin_index: int
    history_len: int
    horizon_len: int
    slice_tags: frozenset = field(default_factory=lambda: frozenset({SLICE_OVERALL}))

    def __post_init__(self):
        if self.origin_index - self.history_len + 1 < 0:
            raise ValueError("history window extends before record start")
        if self.origin_index + self.horizon_len >= self.record.n_steps:
            raise ValueError("target window extends past record end")
        if SLICE_OVERALL not in self.slice_tags:
            object.__setattr__(self, "slice_tags", frozenset(self.slice_tags) | {SLICE_OVERALL})

    def history_slice(self) -> slice:
        return slice(self.origin_index - self.history_len + 1, self.origin_index + 1)

    def target_slice(self) -> slice:
        return slice(self.origin_index + 1, self.origin_index + 1 + self.horizon_len)

    @property
    def target(self) -> np.ndarray:
        return self.record.cgm[self.target_slice()]


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint patient-level train/valid/test split."""

    train: frozenset
    valid: frozenset
    test: frozenset
    ratios: tuple
    seed: int

    def __post_init__(self):
        if self.train & self.valid or self.train & self.test or self.valid & self.test:
            raise ValueError("split sets must be pairwise disjoint")


def split_on_gaps(timestamps: np.ndarray, values: np.ndarray, max_gap_s: int = 1_800):
    """Split an observation stream wherever consecutive gaps exceed ``max_gap_s``.

    Returns a list of (timestamps, values) segments preserving order.
    """
    timestamps = np.asarray(timestamps, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if timestamps.size != values.size:
        raise ValueError("timestamps and values must have the same length")
    if timestamps.size == 0:
        return []
    if np.any(np.diff(timestamps) < 0):
        raise ValueError("timestamps must be sorted ascending")
    breaks = np.flatnonzero(np.diff(timestamps) > max_gap_s) + 1
    return [
        (ts, vs)
        for ts, vs in zip(np.split(timestamps, breaks), np.split(values, breaks))
    ]


def interpolate_to_grid(seg_times: np.ndarray, seg_values: np.ndarray, step: int = GRID_STEP_S):
    """Resample one gap-bounded segment onto a regular grid by linear interpolation.

    The grid is anchored at the first observation, so already-gridded input
    is reproduced exactly. Returns (grid, values) or None when the segment
    has fewer than two observations.
    """
    seg_times = np.asarray(seg_times, dtype=np.int64)
    seg_values = np.asarray(seg_values, dtype=float)
    if seg_times.size < 2:
        return None
    n_steps = int((seg_times[-1] - seg_times[0]) // step) + 1
    grid = TimeGrid(start_time=int(seg_times[0]), step=step, n_steps=n_steps)
    values = np.interp(grid.times(), seg_times, seg_values)
    return grid, values


def extract_windows(record: SequenceRecord, history_len: int, horizon_len: int,
                    stride: int = 1, utc_offset_s: int = 0):
    """All sliding-window forecast samples of a record.

    Yields floor((n - H - L)/stride) + 1 samples when n >= H + L, else none.
    """
    n = record.n_steps
    if history_len <= 0 or horizon_len <= 0 or stride <= 0:
        raise ValueError("history_len, horizon_len and stride must be positive")
    if n < history_len + horizon_len:
        return []
    samples = []
    for origin in range(history_len - 1, n - horizon_len, stride):
        sample = ForecastSample(record, origin, history_len, horizon_len)
        samples.append(replace(sample, slice_tags=tag_slices(sample, utc_offset_s)))
    return samples


def tag_slices(sample: ForecastSample, utc_offset_s: int = 0) -> frozenset:
    """Slice membership of a forecast sample, decided at the forecast origin."""
    record = sample.record
    origin_time = record.grid.time_at(sample.origin_index)
    tags = {SLICE_OVERALL}
    if _bolus_in_preceding_hour(record, sample.origin_index):
        tags.add(SLICE_POST_BOLUS)
    if is_nocturnal(origin_time, utc_offset_s):
        tags.add(SLICE_NOCTURNAL)
    return frozenset(tags)


def _bolus_in_preceding_hour(record: SequenceRecord, index: int) -> bool:
    # half-open window (t - 60 min, t]
    t = record.grid.time_at(index)
    times = record.grid.times()
    mask = (times > t - POST_BOLUS_WINDOW_S) & (times <= t)
    return bool(np.any(record.bolus[mask] > 0))


def is_nocturnal(timestamp: int, utc_offset_s: int = 0) -> bool:
    clock = (int(timestamp) + utc_offset_s) % SECONDS_PER_DAY
    return NOCTURNAL_START_S <= clock < NOCTURNAL_END_S


def split_patients(subject_ids: Sequence[str], ratios=(0.7, 0.1, 0.2), seed: int = 0) -> SplitAssignment:
    """Deterministic disjoint train/valid/test partition of subjects.

    Valid/test sizes are the rounded ratio shares; the remainder goes to
    train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three non-negative fractions")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    ids = sorted(set(subject_ids))
    n = len(ids)
    n_nonzero = sum(1 for r in ratios if r > 0)
    if n < n_nonzero:
        raise ValueError(f"need at least {n_nonzero} subjects for {n_nonzero} nonzero splits")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_valid = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    n_train = n - n_valid - n_test
    shuffled = [ids[i] for i in order]
    return SplitAssignment(
        train=frozenset(shuffled[:n_train]),
        valid=frozenset(shuffled[n_train:n_train + n_valid]),
        test=frozenset(shuffled[n_train + n_valid:]),
        ratios=ratios,
        seed=seed,
    )
