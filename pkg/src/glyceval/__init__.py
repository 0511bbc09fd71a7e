"""Task-aware evaluation toolkit for action-conditional glucose forecasting.

Two evaluation arms over a common gridded representation: event-level
hypoglycemia safety gating on observational records, and counterfactual
insulin-perturbation benchmarks backed by an embedded virtual-patient
simulator, with policy-regret action selection under an asymmetric
clinical risk cost.
"""

from .timeseries import (
    ForecastSample,
    SequenceRecord,
    SplitAssignment,
    TimeGrid,
    extract_windows,
    interpolate_to_grid,
    split_on_gaps,
    split_patients,
    tag_slices,
)
from .harmonize import (
    HarmonizeConfig,
    RawCohortEvents,
    read_records_csv,
    run_pipeline,
    write_records_csv,
)
from .forecasters import (
    ArxForecaster,
    ForecastRequest,
    OracleForecaster,
    ZohForecaster,
    arx_predict,
    fit_arx,
    load_params,
    predict_over_record,
    save_params,
    zoh_predict,
)
from .risk import PegZone, bgri_cost, bgri_f, peg_zone, rmse, unsafe_fraction
from .alarms import Alarm, GatingResult, HypoEvent, detect_events, generate_alarms, match_alarms
from .insilico import (
    ActionMenuRollouts,
    EpisodePair,
    Perturbation,
    SimState,
    VirtualSubject,
    generate_action_rollouts,
    generate_paired_episodes,
    generate_standard,
    sample_subject,
)
from .counterfactual import (
    effect_rmse,
    evaluate_action_selection,
    evaluate_effect_metrics,
    kendall_tau_b,
    policy_regret,
    sign_agreement,
)
from .report import MetricReport, RunConfig, bootstrap_ci, emit_report, macro_average
from .bench import evaluate_forecast, evaluate_gating, fit_cohort_arx, run_full, simulate_cohort

__version__ = "0.1.0"
