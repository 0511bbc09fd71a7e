"""Pointwise forecast risk metrics.

RMSE, Parkes (consensus) error-grid zone classification for type 1
diabetes with the C-E unsafe fraction, and the symmetrized blood-glucose
risk transform with its squared-risk trajectory cost.
"""

from __future__ import annotations

from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

PEG_MAX_MGDL = 550.0
"""Published domain of the Parkes grid; inputs above are clamped."""

RISK_CLIP_MIN_MGDL = 20.0
"""Glucose floor applied before the risk transform."""


class PegZone(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"


# Type-1 Parkes grid boundary polylines, (reference, prediction) vertices.
# "Upper" boundaries separate over-prediction zones, "lower" boundaries
# under-prediction zones. Points on a boundary belong to the safer zone.
_PEG_UPPER = {
    PegZone.E: [(0, 150), (35, 155), (50, 550)],
    PegZone.D: [(0, 100), (25, 100), (50, 125), (80, 215), (125, 550)],
    PegZone.C: [(0, 60), (30, 60), (50, 80), (70, 110), (260, 550)],
    PegZone.B: [(0, 50), (30, 50), (140, 170), (280, 380), (430, 550)],
}
_PEG_LOWER = {
    PegZone.D: [(250, 0), (250, 40), (550, 150)],
    PegZone.C: [(120, 0), (120, 30), (260, 130), (550, 250)],
    PegZone.B: [(50, 0), (50, 30), (170, 145), (385, 300), (550, 450)],
}


def _polyline_y(vertices, x: float) -> float:
    """Boundary height at reference x; vertical leading edges and final
    segments are extended so every x in [0, 550] is covered."""
    xs = [v[0] for v in vertices]
    ys = [v[1] for v in vertices]
    if x <= xs[0]:
        return ys[0]
    for (x0, y0), (x1, y1) in zip(vertices, vertices[1:]):
        if x <= x1:
            if x1 == x0:
                return max(y0, y1)
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    # extrapolate along the last segment
    (x0, y0), (x1, y1) = vertices[-2], vertices[-1]
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


def peg_zone(reference: float, prediction: float) -> PegZone:
    """Parkes zone of one (reference, prediction) pair, both in mg/dL."""
    if reference <= 0 or prediction <= 0:
        raise ValueError("glucose values must be positive")
    x = min(float(reference), PEG_MAX_MGDL)
    y = min(float(prediction), PEG_MAX_MGDL)
    for zone in (PegZone.E, PegZone.D, PegZone.C, PegZone.B):
        if y > _polyline_y(_PEG_UPPER[zone], x):
            return zone
    for zone in (PegZone.D, PegZone.C, PegZone.B):
        # lower boundaries are stored as x-of-y polylines mirrored: reuse the
        # same helper with axes swapped
        if x > _polyline_y([(py, px) for px, py in _PEG_LOWER[zone]], y):
            return zone
    return PegZone.A


UNSAFE_ZONES = frozenset({PegZone.C, PegZone.D, PegZone.E})


def rmse(predictions: Sequence[float], references: Sequence[float]) -> float:
    predictions = np.asarray(predictions, dtype=float)
    references = np.asarray(references, dtype=float)
    if predictions.shape != references.shape:
        raise ValueError("prediction/reference length mismatch")
    if predictions.size == 0:
        raise ValueError("rmse of empty series is undefined")
    return float(np.sqrt(np.mean((predictions - references) ** 2)))


def unsafe_fraction(pairs: Iterable[Tuple[float, float]]) -> Optional[float]:
    """Percentage of (reference, prediction) pairs in zones C-E.

    Returns None for an empty pair list (absent, not zero).
    """
    zones = [peg_zone(ref, pred) for ref, pred in pairs]
    if not zones:
        return None
    unsafe = sum(1 for z in zones if z in UNSAFE_ZONES)
    return 100.0 * unsafe / len(zones)


def bgri_f(glucose) -> np.ndarray:
    """Symmetrizing risk transform f(g) = 1.509 [(ln g)^1.084 - 5.381].

    Inputs are clipped to a 20 mg/dL floor; f is ~0 at 112.5 mg/dL,
    negative in hypo- and positive in hyperglycemia.
    """
    g = np.clip(np.asarray(glucose, dtype=float), RISK_CLIP_MIN_MGDL, None)
    return 1.509 * (np.log(g) ** 1.084 - 5.381)


def bgri_cost(trajectory) -> float:
    """Mean squared-risk cost over a glucose trajectory: mean of 10 f(g)^2."""
    trajectory = np.asarray(trajectory, dtype=float)
    if trajectory.size == 0:
        raise ValueError("cost of an empty trajectory is undefined")
    f = bgri_f(trajectory)
    return float(np.mean(10.0 * f ** 2))
