"""Shared fixtures and builders for the test suite."""

import numpy as np
import pytest

from glyceval.timeseries import GRID_STEP_S, SequenceRecord, TimeGrid

EPOCH = 1_672_531_200  # 2023-01-01 00:00 UTC


def make_record(cgm, basal=None, bolus=None, meal=None, start_time=EPOCH,
                pat_id="p0", seq_id="s0", source="real"):
    """SequenceRecord with zero-filled action channels by default."""
    cgm = np.asarray(cgm, dtype=float)
    n = cgm.size
    zeros = np.zeros(n)
    return SequenceRecord(
        pat_id=pat_id, seq_id=seq_id,
        grid=TimeGrid(start_time, GRID_STEP_S, n),
        cgm=cgm,
        basal=zeros.copy() if basal is None else np.asarray(basal, dtype=float),
        bolus_standard=zeros.copy() if bolus is None else np.asarray(bolus, dtype=float),
        bolus_extended=zeros.copy(),
        meal=zeros.copy() if meal is None else np.asarray(meal, dtype=float),
        source=source,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
