"""Counterfactual (arm-2) metrics.

Effect RMSE, sign agreement, and Kendall tau-b over action menus for the
paired factual/counterfactual episodes, plus model-based bolus selection
with action match rate and policy regret under the risk cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .forecasters import ForecastRequest, negated_oracle_predict
from .insilico import (
    ActionMenuRollouts,
    EPISODE_STEPS,
    EpisodePair,
    StandardTrajectory,
)
from .risk import bgri_cost

EFFECT_LEADS_MIN = (30, 60, 120)
"""Evaluation leads for the effect metrics, minutes after onset."""


def _lead_index(lead_minutes: int) -> int:
    steps = lead_minutes // 5
    if not 1 <= steps <= EPISODE_STEPS:
        raise ValueError(f"lead {lead_minutes} min outside the episode window")
    return steps - 1


@dataclass(frozen=True)
class EffectPair:
    """True and predicted intervention effect at one lead."""

    delta_true: float
    delta_pred: float
    lead_minutes: int


@dataclass(frozen=True)
class ActionScore:
    action: float
    j_true: float
    j_pred: float


def effect_rmse(pairs: Sequence[EffectPair]) -> Optional[float]:
    if not pairs:
        return None
    diffs = np.array([p.delta_pred - p.delta_true for p in pairs])
    return float(np.sqrt(np.mean(diffs ** 2)))


def sign_agreement(pairs: Sequence[EffectPair], deadband: float = 0.0) -> Optional[float]:
    """Fraction of pairs with matching effect sign; sign(0) = 0, so a
    zero-zero pair counts as agreement. ``deadband`` optionally zeroes
    near-zero effects before comparison."""
    if not pairs:
        return None
    agree = [
        np.sign(_deadband(p.delta_pred, deadband)) == np.sign(_deadband(p.delta_true, deadband))
        for p in pairs
    ]
    return float(np.mean(agree))


def _deadband(value: float, deadband: float) -> float:
    return 0.0 if abs(value) <= deadband else value


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Tie-corrected Kendall rank correlation; None when either list is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n != y.size:
        raise ValueError("length mismatch")
    if n < 2:
        raise ValueError("need at least two values")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return None
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            s = np.sign(x[j] - x[i]) * np.sign(y[j] - y[i])
            if s > 0:
                concordant += 1
            elif s < 0:
                discordant += 1
    n0 = n * (n - 1) // 2
    n1 = sum(c * (c - 1) // 2 for c in _tie_counts(x))
    n2 = sum(c * (c - 1) // 2 for c in _tie_counts(y))
    return (concordant - discordant) / math.sqrt((n0 - n1) * (n0 - n2))


def _tie_counts(values: np.ndarray):
    _, counts = np.unique(values, return_counts=True)
    return counts


# ---------------------------------------------------------------------------
# Predictors
#
# A predictor maps one simulated arm to a predicted glucose trajectory:
#   predict(traj, onset_index, basal_plan, bolus_plan, true_glucose,
#           factual_glucose) -> array of EPISODE_STEPS predictions
# Models use the pre-onset history plus the planned actions; the oracle
# doubles use the simulated truths directly.
# ---------------------------------------------------------------------------

Predictor = Callable[..., np.ndarray]


def oracle_predictor(traj, onset_index, basal_plan, bolus_plan,
                     true_glucose, factual_glucose) -> np.ndarray:
    return np.asarray(true_glucose, dtype=float).copy()


def negated_oracle_predictor(traj, onset_index, basal_plan, bolus_plan,
                             true_glucose, factual_glucose) -> np.ndarray:
    return negated_oracle_predict(true_glucose, factual_glucose)


def make_model_predictor(model, history_len: int) -> Predictor:
    """Adapter feeding a forecaster the factual history and the arm's plan."""

    def predict(traj: StandardTrajectory, onset_index: int, basal_plan, bolus_plan,
                true_glucose, factual_glucose) -> np.ndarray:
        record = traj.record
        hist = slice(onset_index - history_len + 1, onset_index + 1)
        request = ForecastRequest(
            history={"cgm": record.cgm[hist], "basal": record.basal[hist],
                     "bolus": record.bolus[hist]},
            horizon_len=EPISODE_STEPS,
            planned_actions={"basal": np.asarray(basal_plan, dtype=float),
                             "bolus": np.asarray(bolus_plan, dtype=float)})
        return np.asarray(model.predict(request), dtype=float)

    return predict


@dataclass(frozen=True)
class SubjectEffectMetrics:
    """Per-subject, per-family effect metrics at one lead."""

    subject_id: str
    family: str
    lead_minutes: int
    effect_rmse: Optional[float]
    sign_agreement: Optional[float]
    kendall_tau: Optional[float]
    n_pairs: int


def evaluate_effect_metrics(traj: StandardTrajectory, episodes: Sequence[EpisodePair],
                            predict_fn: Predictor,
                            leads_min: Sequence[int] = EFFECT_LEADS_MIN,
                            sa_deadband: float = 0.0) -> List[SubjectEffectMetrics]:
    """Arm-2 effect metrics for one subject's episode set.

    Invalid episode pairs are excluded. Kendall tau is computed per onset
    over the valid menu members of each family, then averaged over onsets;
    constant-value menus are excluded from the average.
    """
    predictions: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    valid = [ep for ep in episodes if ep.valid]
    arm_preds = []
    for ep in valid:
        pred_fact = predict_fn(traj, ep.onset_index, ep.factual_basal, ep.factual_bolus,
                               ep.factual_cgm, ep.factual_cgm)
        pred_cf = predict_fn(traj, ep.onset_index, ep.cf_basal, ep.cf_bolus,
                             ep.cf_cgm, ep.factual_cgm)
        arm_preds.append((ep, pred_fact, pred_cf))

    results = []
    for family in ("basal", "bolus"):
        fam = [(ep, pf, pc) for ep, pf, pc in arm_preds if ep.perturbation.family == family]
        for lead in leads_min:
            k = _lead_index(lead)
            pairs = [
                EffectPair(delta_true=float(ep.cf_cgm[k] - ep.factual_cgm[k]),
                           delta_pred=float(pc[k] - pf[k]),
                           lead_minutes=lead)
                for ep, pf, pc in fam
            ]
            taus = []
            for onset in sorted({ep.onset_index for ep, _, _ in fam}):
                menu = [(ep, pc) for ep, _, pc in fam if ep.onset_index == onset]
                if len(menu) < 2:
                    continue
                tau = kendall_tau_b([ep.cf_cgm[k] for ep, _ in menu],
                                    [pc[k] for _, pc in menu])
                if tau is not None:
                    taus.append(tau)
            results.append(SubjectEffectMetrics(
                subject_id=traj.subject.subject_id, family=family, lead_minutes=lead,
                effect_rmse=effect_rmse(pairs),
                sign_agreement=sign_agreement(pairs, sa_deadband),
                kendall_tau=float(np.mean(taus)) if taus else None,
                n_pairs=len(pairs)))
    return results


def select_action(scores: Sequence[ActionScore], predicted: bool = True) -> ActionScore:
    """Argmin over the menu (predicted or simulator cost); ties broken by
    the action closest to the factual plan, then by the smaller action."""
    if not scores:
        raise ValueError("empty action menu")
    costs = np.array([s.j_pred if predicted else s.j_true for s in scores])
    best = costs.min()
    tied = [s for s, c in zip(scores, costs) if c == best]
    return min(tied, key=lambda s: (abs(s.action - _factual_amount(scores)), s.action))


def _factual_amount(scores: Sequence[ActionScore]) -> float:
    # the menu is built around the factual plan; action 0 extra units is it
    return 0.0


def score_action_menu(traj: StandardTrajectory, rollouts: ActionMenuRollouts,
                      predict_fn: Predictor) -> List[ActionScore]:
    """Simulator and model costs for each candidate action of one episode."""
    sl = slice(rollouts.onset_index, rollouts.onset_index + EPISODE_STEPS)
    basal_plan = traj.basal_plan[sl]
    factual_glucose = rollouts.trajectories[0]  # zero extra bolus arm
    scores = []
    for amount, true_glucose, j_true in zip(rollouts.actions, rollouts.trajectories,
                                            rollouts.costs):
        bolus_plan = traj.bolus_plan[sl].copy()
        bolus_plan[0] += amount
        pred = predict_fn(traj, rollouts.onset_index, basal_plan, bolus_plan,
                          true_glucose, factual_glucose)
        scores.append(ActionScore(action=float(amount), j_true=float(j_true),
                                  j_pred=bgri_cost(pred)))
    return scores


def policy_regret(scores: Sequence[ActionScore]) -> float:
    """Simulator-cost increase from following the model-chosen action."""
    chosen = select_action(scores, predicted=True)
    optimal = select_action(scores, predicted=False)
    return chosen.j_true - optimal.j_true


def action_match(scores: Sequence[ActionScore]) -> bool:
    return select_action(scores, predicted=True).action == select_action(
        scores, predicted=False).action


@dataclass(frozen=True)
class SubjectPolicyMetrics:
    subject_id: str
    action_match_rate: float
    mean_regret: float
    n_episodes: int


def evaluate_action_selection(traj: StandardTrajectory,
                              rollout_sets: Sequence[ActionMenuRollouts],
                              predict_fn: Predictor) -> SubjectPolicyMetrics:
    """Action match rate and mean regret over one subject's episodes."""
    if not rollout_sets:
        raise ValueError("no action-menu episodes")
    matches, regrets = [], []
    for rollouts in rollout_sets:
        scores = score_action_menu(traj, rollouts, predict_fn)
        matches.append(action_match(scores))
        regrets.append(policy_regret(scores))
    return SubjectPolicyMetrics(
        subject_id=traj.subject.subject_id,
        action_match_rate=float(np.mean(matches)),
        mean_regret=float(np.mean(regrets)),
        n_episodes=len(rollout_sets))
