"""surrsim: joint surrogate/survival trial simulation and surrogacy metrics.

Simulates two-arm oncology trials where a bi-exponential tumor trajectory
drives both an early surrogate measurement and the survival hazard, then
scores how well patient-level association metrics (Harrell's C, integrated
Brier score, landmark log hazard ratio) track trial-level surrogacy (meta-
analysis R²) as the trajectory-hazard link and direct treatment effects
vary.
"""

__version__ = "0.1.0"

from .scenario import (
    MAX_DURATION_WEEKS,
    MONTH_IN_WEEKS,
    PRESETS,
    PROFILES,
    T_STAR_WEEKS,
    Cell,
    Profile,
    ScenarioSpec,
    derive_stream,
    expand_cells,
    get_scenario,
    load_scenarios,
)
from .trajectory import (
    SurrogateMeasurement,
    TrajectoryParams,
    biexp_value,
    measure_surrogate,
    sample_params,
)
from .survsim import (
    CalibrationResult,
    HazardParams,
    Patient,
    Trial,
    calibrate_beta0,
    cumulative_hazard,
    hazard,
    sample_event_time,
    simulate_trial,
)
from .survmodels import (
    CoxFit,
    StepFunction,
    SurvivalSample,
    breslow_baseline,
    fit_cox,
    km_estimate,
    predict_survival,
)
from .metrics import (
    LandmarkDataset,
    StudyMetrics,
    UnusableTrialError,
    brier_at,
    harrell_c,
    integrated_brier,
    rebaseline,
    study_metrics,
)
from .meta import (
    MetaPair,
    R2Result,
    TrialEffect,
    assemble_pairs,
    correlation_report,
    fit_r2,
    spearman,
    trial_effects,
)

__all__ = [name for name in dir() if not name.startswith("_")]
