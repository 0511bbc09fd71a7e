"""Minimal deterministic virtual-patient simulator and episode construction.

A Bergman-style minimal model with subcutaneous insulin and two-compartment
meal absorption, integrated with fixed-step RK4 at a 1-minute internal
step. On top of it: a basal-bolus behavior policy, 15-day standard
trajectory generation, paired factual/counterfactual insulin-perturbation
episodes, and the nine-way bolus action-menu rollouts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .risk import bgri_cost
from .timeseries import GRID_STEP_S, SequenceRecord, TimeGrid

INTERNAL_STEP_MIN = 1
GRID_STEP_MIN = GRID_STEP_S // 60
EPISODE_STEPS = 24
"""Two hours after perturbation onset at the 5-minute grid."""

GLUCOSE_OUT_MIN = 20.0
GLUCOSE_OUT_MAX = 600.0

INSULIN_VOLUME_ML_PER_KG = 120.0
CARB_BIOAVAILABILITY = 0.8

SIM_EPOCH = 1_672_531_200  # 2023-01-01 00:00 UTC; aligns day boundaries with the clock

ACTION_MENU_SCALES = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)

BASAL_MENU = (
    ("suspend", 0.0),
    ("reduce", 0.5),
    ("increase", 1.5),
    ("strong_increase", 2.0),
)
BOLUS_MENU = (
    ("remove", 0.0),
    ("scale_down", 0.5),
    ("scale_up", 2.0),
    ("advance", -30.0),
    ("delay", 30.0),
    ("add", float("nan")),  # amount filled with the subject mean bolus
)


@dataclass(frozen=True)
class VirtualSubject:
    """Physiological parameters of one virtual patient."""

    subject_id: str
    p1: float            # glucose effectiveness, 1/min
    p2: float            # remote insulin action decay, 1/min
    p3: float            # insulin action gain, 1/min per uU/mL
    gb: float            # basal glucose, mg/dL
    ib: float            # basal plasma insulin, uU/mL
    vol_dl_per_kg: float # glucose distribution volume, dL/kg
    ka: float            # sc insulin absorption rate, 1/min
    ke: float            # plasma insulin elimination rate, 1/min
    tau_m: float         # meal absorption time constant, min
    carb_ratio: float    # g carbohydrate per U
    correction_factor: float  # mg/dL per U
    weight_kg: float
    seed: int

    def __post_init__(self):
        for name in ("p1", "p2", "p3", "ka", "ke", "tau_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def insulin_volume_ml(self) -> float:
        return INSULIN_VOLUME_ML_PER_KG * self.weight_kg

    @property
    def glucose_volume_dl(self) -> float:
        return self.vol_dl_per_kg * self.weight_kg

    @property
    def basal_rate_u_per_h(self) -> float:
        # rate that holds plasma insulin at ib in steady state
        u_uu_per_min = self.ib * self.insulin_volume_ml * self.ke
        return u_uu_per_min * 60.0 / 1e6


@dataclass(frozen=True)
class SimState:
    """Simulator state; glucose clamped to [20, 600] only on output."""

    g: float     # plasma glucose, mg/dL
    x: float     # remote insulin action, 1/min
    i_sc: float  # subcutaneous insulin, uU/mL
    i_p: float   # plasma insulin, uU/mL
    q1: float    # meal compartment 1, mg
    q2: float    # meal compartment 2, mg

    def glucose_out(self) -> float:
        return float(np.clip(self.g, GLUCOSE_OUT_MIN, GLUCOSE_OUT_MAX))


@dataclass(frozen=True)
class Perturbation:
    family: str   # "basal" or "bolus"
    kind: str
    parameter: float

    def __post_init__(self):
        if self.family not in ("basal", "bolus"):
            raise ValueError(f"unknown perturbation family {self.family!r}")


@dataclass(frozen=True)
class EpisodePair:
    """Factual rollout plus one counterfactual rollout from the same onset."""

    subject_id: str
    onset_index: int
    perturbation: Perturbation
    valid: bool
    factual_cgm: np.ndarray       # leads 1..24 after onset
    cf_cgm: np.ndarray
    factual_basal: np.ndarray     # plans over grid indices onset..onset+23
    factual_bolus: np.ndarray
    cf_basal: np.ndarray
    cf_bolus: np.ndarray
    meal: np.ndarray              # identical across arms by construction


@dataclass(frozen=True)
class ActionMenuRollouts:
    """Nine candidate extra boluses at onset with simulated trajectories/costs."""

    subject_id: str
    onset_index: int
    actions: np.ndarray        # candidate bolus amounts, U
    trajectories: np.ndarray   # (9, 24) simulated glucose
    costs: np.ndarray          # (9,) simulator risk costs
    factual_bolus_amount: float

    def __post_init__(self):
        if len(self.actions) != len(ACTION_MENU_SCALES):
            raise ValueError("action menu must have exactly 9 candidates")


@dataclass(frozen=True)
class StandardTrajectory:
    """A standard rollout plus the per-step state/plan needed to branch off it."""

    subject: VirtualSubject
    record: SequenceRecord
    states: Tuple[SimState, ...]   # state at each grid time, before that step's impulses
    basal_plan: np.ndarray         # U/h per grid step
    bolus_plan: np.ndarray         # U per grid step
    carbs_actual: np.ndarray       # g per grid step (what was eaten)


def sample_subject(seed: int) -> VirtualSubject:
    """Deterministic virtual subject with parameters in physiologic ranges.

    The dosing parameters (carb ratio, correction factor) are calibrated
    to the drawn physiology from unit bolus/meal probe responses so meal
    boluses roughly cover announced carbs. Hypoglycemia then arises from
    meal-intake deviations during rollout (partly eaten or late meals
    after a full bolus), which keeps it insulin-driven and post-bolus.
    """
    rng = np.random.default_rng(seed)
    base = VirtualSubject(
        subject_id=f"vp{seed:05d}",
        p1=rng.uniform(0.02, 0.035),
        p2=rng.uniform(0.035, 0.06),
        p3=rng.uniform(1.2e-5, 2.8e-5),
        gb=rng.uniform(110.0, 140.0),
        ib=rng.uniform(8.0, 14.0),
        vol_dl_per_kg=rng.uniform(1.5, 1.7),
        ka=rng.uniform(0.025, 0.045),
        ke=rng.uniform(0.08, 0.12),
        tau_m=rng.uniform(30.0, 45.0),
        carb_ratio=10.0,
        correction_factor=40.0,
        weight_kg=rng.uniform(55.0, 90.0),
        seed=seed,
    )
    aggressiveness = rng.uniform(0.85, 1.0)
    drop_per_u = _probe_drop_per_unit(base)
    rise_per_g = _probe_rise_per_gram(base)
    return replace(base,
                   carb_ratio=drop_per_u / rise_per_g / aggressiveness,
                   correction_factor=drop_per_u)


def _probe_drop_per_unit(subject: VirtualSubject, dose_u: float = 5.0,
                         n_steps: int = 48) -> float:
    """Peak glucose drop per unit for a bolus given at equilibrium."""
    state = equilibrium_state(subject)
    low = subject.gb
    for i in range(n_steps):
        state = step(state, subject, subject.basal_rate_u_per_h,
                     bolus_u=dose_u if i == 0 else 0.0)
        low = min(low, state.g)
    return (subject.gb - low) / dose_u


def _probe_rise_per_gram(subject: VirtualSubject, carbs_g: float = 60.0,
                         n_steps: int = 36) -> float:
    """Peak glucose rise per gram for an uncovered meal at equilibrium."""
    state = equilibrium_state(subject)
    high = subject.gb
    for i in range(n_steps):
        state = step(state, subject, subject.basal_rate_u_per_h,
                     carbs_g=carbs_g if i == 0 else 0.0)
        high = max(high, state.g)
    return (high - subject.gb) / carbs_g


def equilibrium_state(subject: VirtualSubject) -> SimState:
    u_uu_per_min = subject.basal_rate_u_per_h * 1e6 / 60.0
    i_sc = u_uu_per_min / (subject.insulin_volume_ml * subject.ka)
    return SimState(g=subject.gb, x=0.0, i_sc=i_sc, i_p=subject.ib, q1=0.0, q2=0.0)


def _derivatives(s, subject: VirtualSubject, u_uu_per_min: float):
    g, x, i_sc, i_p, q1, q2 = s
    ra = q2 / subject.tau_m  # mg/min
    dg = -subject.p1 * (g - subject.gb) - x * g + ra / subject.glucose_volume_dl
    dx = -subject.p2 * x + subject.p3 * (i_p - subject.ib)
    di_sc = u_uu_per_min / subject.insulin_volume_ml - subject.ka * i_sc
    di_p = subject.ka * i_sc - subject.ke * i_p
    dq1 = -q1 / subject.tau_m
    dq2 = (q1 - q2) / subject.tau_m
    return np.array([dg, dx, di_sc, di_p, dq1, dq2])


def step(state: SimState, subject: VirtualSubject, basal_u_per_h: float,
         bolus_u: float = 0.0, carbs_g: float = 0.0, dt_min: int = GRID_STEP_MIN) -> SimState:
    """Advance one grid step: apply impulses, then fixed-step RK4 at 1 min."""
    if dt_min % INTERNAL_STEP_MIN != 0:
        raise ValueError("dt must be a multiple of the internal step")
    s = np.array([state.g, state.x, state.i_sc, state.i_p, state.q1, state.q2])
    s[2] += bolus_u * 1e6 / subject.insulin_volume_ml
    s[4] += carbs_g * 1000.0 * CARB_BIOAVAILABILITY
    u = basal_u_per_h * 1e6 / 60.0
    h = float(INTERNAL_STEP_MIN)
    for _ in range(dt_min // INTERNAL_STEP_MIN):
        k1 = _derivatives(s, subject, u)
        k2 = _derivatives(s + 0.5 * h * k1, subject, u)
        k3 = _derivatives(s + 0.5 * h * k2, subject, u)
        k4 = _derivatives(s + h * k3, subject, u)
        s = s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        np.maximum(s, 0.0, out=s)
    return SimState(*s)


def behavior_policy(subject: VirtualSubject, glucose: float,
                    announced_carbs_g: float) -> Tuple[float, float]:
    """Basal-bolus policy: fixed basal; meal bolus with correction above 120."""
    basal = subject.basal_rate_u_per_h
    if announced_carbs_g <= 0:
        return basal, 0.0
    bolus = announced_carbs_g / subject.carb_ratio
    bolus += max(0.0, (glucose - 120.0) / subject.correction_factor)
    return basal, bolus


SENSOR_NOISE_PHI = 0.85
SENSOR_NOISE_STATIONARY_SD = 3.0
SENSOR_NOISE_SD = SENSOR_NOISE_STATIONARY_SD * math.sqrt(1.0 - SENSOR_NOISE_PHI ** 2)

MEAL_SKIP_PROB = 0.05
MEAL_DELAY_PROB = 0.25
MEAL_DELAY_STEPS = (4, 14)  # 20 to 70 minutes late


def generate_standard(subject: VirtualSubject, days: int = 15,
                      start_time: int = SIM_EPOCH) -> StandardTrajectory:
    """Standard behavior-policy rollout: seeded daily meals with jitter in
    time and size, plus intake deviations (carb-counting error, partly
    eaten meals, meals eaten late after the bolus) that produce
    insulin-driven hypoglycemia.

    The recorded trace carries autocorrelated sensor noise on top of the
    simulated glucose; the saved states stay noise-free so branched
    rollouts remain exact."""
    rng = np.random.default_rng(np.random.SeedSequence([subject.seed, 1]))
    steps_per_day = 86_400 // GRID_STEP_S
    n = days * steps_per_day
    announced = np.zeros(n)
    actual = np.zeros(n)
    meal_slots = ((7.5, 30.0, 60.0), (12.5, 40.0, 80.0), (18.5, 50.0, 90.0))
    for day in range(days):
        for hour, lo, hi in meal_slots:
            jitter_min = rng.uniform(-45.0, 45.0)
            idx = day * steps_per_day + int(round((hour * 60 + jitter_min) / GRID_STEP_MIN))
            idx = min(max(idx, day * steps_per_day), (day + 1) * steps_per_day - 1)
            grams = rng.uniform(lo, hi)
            announced[idx] += grams
            u = rng.uniform()
            if u < MEAL_SKIP_PROB:
                # meal mostly skipped after a full bolus
                actual[idx] += grams * rng.uniform(0.1, 0.5)
            elif u < MEAL_SKIP_PROB + MEAL_DELAY_PROB:
                # meal eaten late; insulin acts alone until the carbs land
                delay = int(rng.integers(MEAL_DELAY_STEPS[0], MEAL_DELAY_STEPS[1] + 1))
                late = min(idx + delay, n - 1)
                actual[late] += grams * rng.uniform(0.8, 1.1)
            else:
                # ordinary carb-counting error
                actual[idx] += grams * rng.uniform(0.65, 1.25)

    basal_plan = np.full(n, subject.basal_rate_u_per_h)
    bolus_plan = np.zeros(n)
    cgm = np.zeros(n)
    states: List[SimState] = []
    state = equilibrium_state(subject)
    for i in range(n):
        states.append(state)
        cgm[i] = state.glucose_out()
        _, bolus = behavior_policy(subject, state.glucose_out(), announced[i])
        bolus_plan[i] = bolus
        state = step(state, subject, basal_plan[i], bolus, actual[i])

    noise = np.zeros(n)
    eps = rng.normal(0.0, SENSOR_NOISE_SD, size=n)
    for i in range(1, n):
        noise[i] = SENSOR_NOISE_PHI * noise[i - 1] + eps[i]
    cgm = np.clip(cgm + noise, GLUCOSE_OUT_MIN, GLUCOSE_OUT_MAX)

    grid = TimeGrid(start_time, GRID_STEP_S, n)
    record = SequenceRecord(
        pat_id=subject.subject_id, seq_id=f"{subject.subject_id}-std",
        grid=grid, cgm=cgm, basal=basal_plan.copy(),
        bolus_standard=bolus_plan.copy(), bolus_extended=np.zeros(n),
        meal=announced, weight=np.full(n, subject.weight_kg), source="simulator")
    return StandardTrajectory(subject=subject, record=record, states=tuple(states),
                              basal_plan=basal_plan, bolus_plan=bolus_plan,
                              carbs_actual=actual)


def mean_nonzero_bolus(traj: StandardTrajectory) -> float:
    nonzero = traj.bolus_plan[traj.bolus_plan > 0]
    return float(np.mean(nonzero)) if nonzero.size else 0.0


def rollout(traj: StandardTrajectory, start_index: int, basal_plan, bolus_plan,
            n_steps: int = EPISODE_STEPS) -> np.ndarray:
    """Re-simulate from a saved state with a (possibly modified) insulin plan.

    Meals follow the standard trajectory's actual intake. Returns glucose
    at leads 1..n_steps after start_index.
    """
    subject = traj.subject
    state = traj.states[start_index]
    glucose = np.zeros(n_steps)
    for j in range(n_steps):
        idx = start_index + j
        state = step(state, subject, basal_plan[j], bolus_plan[j], traj.carbs_actual[idx])
        glucose[j] = state.glucose_out()
    return glucose


def _episode_onsets(traj: StandardTrajectory, n_onsets: int = 4,
                    min_spacing_steps: int = 36) -> List[int]:
    """Seeded uniform onset times on the final day, minimum spacing enforced."""
    n = traj.record.n_steps
    steps_per_day = 86_400 // GRID_STEP_S
    day_start = n - steps_per_day
    lo, hi = day_start, n - EPISODE_STEPS - 1
    rng = np.random.default_rng(np.random.SeedSequence([traj.subject.seed, 2]))
    for _ in range(10_000):
        onsets = sorted(int(v) for v in rng.integers(lo, hi + 1, size=n_onsets))
        if all(b - a >= min_spacing_steps for a, b in zip(onsets, onsets[1:])):
            return onsets
    raise RuntimeError("could not place episode onsets with the spacing constraint")


def _bolus_family_plans(factual_bolus: np.ndarray, kind: str, parameter: float,
                        avg_bolus: float):
    """Counterfactual bolus plan for one menu entry, or None when invalid."""
    target = np.flatnonzero(factual_bolus > 0)
    plan = factual_bolus.copy()
    if kind == "add":
        plan[0] += avg_bolus
        return plan
    if target.size == 0:
        return None
    j = int(target[0])
    if kind in ("remove", "scale_down", "scale_up"):
        plan[j] = factual_bolus[j] * parameter
        return plan
    if kind in ("advance", "delay"):
        shift = int(round(parameter / GRID_STEP_MIN))
        j_new = j + shift
        if not 0 <= j_new < len(plan):
            return None
        plan[j_new] += plan[j]
        plan[j] = 0.0
        return plan
    raise ValueError(f"unknown bolus perturbation kind {kind!r}")


def generate_paired_episodes(traj: StandardTrajectory,
                             families: Sequence[str] = ("basal", "bolus"),
                             n_onsets: int = 4,
                             min_spacing_steps: int = 36) -> List[EpisodePair]:
    """Paired factual/counterfactual episodes for every onset and menu entry.

    Basal perturbations multiply the basal rate from onset to episode end
    and are always valid; bolus perturbations act on the first factual
    bolus inside the episode and are invalid when there is none or when a
    shifted bolus leaves the window.
    """
    avg_bolus = mean_nonzero_bolus(traj)
    episodes: List[EpisodePair] = []
    for onset in _episode_onsets(traj, n_onsets, min_spacing_steps):
        sl = slice(onset, onset + EPISODE_STEPS)
        factual_basal = traj.basal_plan[sl].copy()
        factual_bolus = traj.bolus_plan[sl].copy()
        meal = traj.record.meal[sl].copy()
        factual_cgm = rollout(traj, onset, factual_basal, factual_bolus)
        if "basal" in families:
            for kind, mult in BASAL_MENU:
                cf_basal = factual_basal * mult
                cf_cgm = rollout(traj, onset, cf_basal, factual_bolus)
                episodes.append(EpisodePair(
                    subject_id=traj.subject.subject_id, onset_index=onset,
                    perturbation=Perturbation("basal", kind, mult), valid=True,
                    factual_cgm=factual_cgm, cf_cgm=cf_cgm,
                    factual_basal=factual_basal, factual_bolus=factual_bolus,
                    cf_basal=cf_basal, cf_bolus=factual_bolus, meal=meal))
        if "bolus" in families:
            for kind, parameter in BOLUS_MENU:
                param = avg_bolus if kind == "add" else parameter
                cf_bolus = _bolus_family_plans(factual_bolus, kind, parameter, avg_bolus)
                if cf_bolus is None:
                    episodes.append(EpisodePair(
                        subject_id=traj.subject.subject_id, onset_index=onset,
                        perturbation=Perturbation("bolus", kind, param), valid=False,
                        factual_cgm=factual_cgm, cf_cgm=factual_cgm.copy(),
                        factual_basal=factual_basal, factual_bolus=factual_bolus,
                        cf_basal=factual_basal, cf_bolus=factual_bolus, meal=meal))
                    continue
                cf_cgm = rollout(traj, onset, factual_basal, cf_bolus)
                episodes.append(EpisodePair(
                    subject_id=traj.subject.subject_id, onset_index=onset,
                    perturbation=Perturbation("bolus", kind, param), valid=True,
                    factual_cgm=factual_cgm, cf_cgm=cf_cgm,
                    factual_basal=factual_basal, factual_bolus=factual_bolus,
                    cf_basal=factual_basal, cf_bolus=cf_bolus, meal=meal))
    return episodes


def generate_action_rollouts(traj: StandardTrajectory, onset_index: int,
                             avg_bolus: Optional[float] = None) -> ActionMenuRollouts:
    """Nine-way bolus menu at one onset: extra bolus at episode start."""
    if avg_bolus is None:
        avg_bolus = mean_nonzero_bolus(traj)
    sl = slice(onset_index, onset_index + EPISODE_STEPS)
    factual_basal = traj.basal_plan[sl].copy()
    factual_bolus = traj.bolus_plan[sl].copy()
    actions = np.array([s * avg_bolus for s in ACTION_MENU_SCALES])
    trajectories = np.zeros((len(actions), EPISODE_STEPS))
    costs = np.zeros(len(actions))
    for i, amount in enumerate(actions):
        plan = factual_bolus.copy()
        plan[0] += amount
        trajectories[i] = rollout(traj, onset_index, factual_basal, plan)
        costs[i] = bgri_cost(trajectories[i])
    return ActionMenuRollouts(
        subject_id=traj.subject.subject_id, onset_index=onset_index,
        actions=actions, trajectories=trajectories, costs=costs,
        factual_bolus_amount=float(factual_bolus[0]))
