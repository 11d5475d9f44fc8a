"""Parameter-space changepoint detection for chaotic dynamics.

Two-stage approach: an amortized neural posterior estimator maps sliding
observation windows to posterior draws over the governing parameters of a
Lorenz-63 system, and penalized kernel changepoint detection runs on the
resulting parameter trajectory (with an observation-space baseline sharing
the same detector).
"""

from .cpd import KernelCostModel, Segmentation, auto_penalty, exact_dp, median_heuristic_gamma, pelt
from .dataset import (
    DEFAULT_PRIOR,
    LOW_HIGH_RANGES,
    NormStats,
    PriorSpec,
    TrainingSet,
    build_changepoint_corpus,
    build_stationary_corpus,
    build_training_set,
    extract_window,
    featurize,
    sample_prior,
)
from .errors import ConfigError, DataError, DivergenceError, TrainingError
from .estimators import KernelChangePointDetector, PosteriorEstimator
from .evaluation import (
    CalibrationReport,
    MatchResult,
    MetricBundle,
    calibrate,
    f1_delta_curve,
    match,
    metrics,
)
from .lorenz import (
    CLASSIC_PARAMS,
    LorenzParams,
    NoiseSpec,
    Segment,
    SegmentSchedule,
    Trajectory,
    add_noise,
    integrate,
    lorenz_rhs,
    simulate_schedule,
)
from .npe import (
    MdnConfig,
    MixtureDensity,
    OptimizerParams,
    PosteriorModel,
    forward,
    grad_nll,
    load_checkpoint,
    log_prob,
    nll_loss,
    sample_posterior,
    save_checkpoint,
    train,
)
from .pipeline import (
    DetectionConfig,
    DetectionResult,
    ParamTrajectory,
    align_to_source,
    detect_obs_cpd,
    detect_param_cpd,
    estimate_trajectory,
)

__version__ = "0.1.0"
