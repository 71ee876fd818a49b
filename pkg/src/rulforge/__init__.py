"""Remaining-useful-life estimation with stacked dilated-conv networks.

The pipeline: window raw 1 Hz flight signals, train a convolutional
regressor on the windows, re-encode each unit's history through that
regressor's last hidden layer, train a second convolutional model on
the encoding sequences, and report fold-ensemble RUL estimates with
confidence intervals. Hyperparameters for both levels come from a
Bayesian search over a fixed space.
"""

from .bayesopt import Categorical, Integer, OptResult, Real, SearchSpace, Trial, minimize
from .errors import (
    ConfigError,
    DataError,
    EnsembleError,
    OrderingError,
    ParseError,
    RulforgeError,
    SchemaError,
    ShapeError,
    TrainingError,
)
from .fleet import (
    AUX_VARIABLES,
    CSV_HEADER,
    DEFAULT_PROFILE,
    VARIABLES,
    W_VARIABLES,
    XS_VARIABLES,
    Fleet,
    SensorFrame,
    SynthProfile,
    UnitRecord,
    load_fleet_csv,
    split_units,
    synthesize_fleet,
    write_fleet_csv,
)
from .metrics import (
    ScoreReport,
    challenge_penalty,
    challenge_score,
    combined_score,
    mae,
    nasa_score,
    rmse,
    score_by_class,
)
from .modelsel import (
    LEVEL1_REFERENCE_CONFIG,
    LEVEL2_REFERENCE_CONFIG,
    CVOutcome,
    Fold,
    FoldPlan,
    FoldScore,
    SearchOutcome,
    build_level1_network,
    build_level2_network,
    cross_validate_level1,
    cross_validate_level2,
    level1_space,
    level2_space,
    level2_seed_from_level1,
    make_fold_plan,
    optimize_level1,
    optimize_level2,
    override_space,
)
from .network import (
    Conv,
    Dense,
    Flatten,
    NetworkSpec,
    ParamSet,
    Pool,
    forward,
    grad_check,
    init_params,
    load_model,
    params_equal,
    predict,
    save_model,
)
from .preprocess import (
    Normalizer,
    WindowSet,
    extract_windows,
    fit_unit_normalizer,
    label_rul,
    window_count,
    window_end_indices,
)
from .stacking import (
    EncodingTrack,
    Level1Member,
    Level2Member,
    PredictionTable,
    assemble_encoding_image,
    confidence_interval,
    encode_unit,
    load_ensemble,
    predict_ensemble,
    save_ensemble,
    score_ensemble,
)
from .training import EpochController, TrainConfig, TrainResult, replay_controller, train

__version__ = "1.0.0"

__all__ = [
    "AUX_VARIABLES",
    "CSV_HEADER",
    "Categorical",
    "ConfigError",
    "Conv",
    "CVOutcome",
    "DataError",
    "DEFAULT_PROFILE",
    "Dense",
    "EncodingTrack",
    "EnsembleError",
    "EpochController",
    "Flatten",
    "Fleet",
    "Fold",
    "FoldPlan",
    "FoldScore",
    "Integer",
    "LEVEL1_REFERENCE_CONFIG",
    "LEVEL2_REFERENCE_CONFIG",
    "Level1Member",
    "Level2Member",
    "NetworkSpec",
    "Normalizer",
    "OptResult",
    "OrderingError",
    "ParamSet",
    "ParseError",
    "Pool",
    "PredictionTable",
    "Real",
    "RulforgeError",
    "SchemaError",
    "ScoreReport",
    "SearchOutcome",
    "SearchSpace",
    "SensorFrame",
    "ShapeError",
    "SynthProfile",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "Trial",
    "UnitRecord",
    "VARIABLES",
    "W_VARIABLES",
    "WindowSet",
    "XS_VARIABLES",
    "assemble_encoding_image",
    "build_level1_network",
    "build_level2_network",
    "challenge_penalty",
    "challenge_score",
    "combined_score",
    "confidence_interval",
    "cross_validate_level1",
    "cross_validate_level2",
    "encode_unit",
    "extract_windows",
    "fit_unit_normalizer",
    "forward",
    "grad_check",
    "init_params",
    "label_rul",
    "mae",
    "level1_space",
    "level2_seed_from_level1",
    "level2_space",
    "load_ensemble",
    "load_fleet_csv",
    "load_model",
    "make_fold_plan",
    "minimize",
    "nasa_score",
    "optimize_level1",
    "optimize_level2",
    "override_space",
    "params_equal",
    "predict",
    "predict_ensemble",
    "rmse",
    "save_ensemble",
    "save_model",
    "score_by_class",
    "score_ensemble",
    "split_units",
    "synthesize_fleet",
    "train",
    "window_count",
    "window_end_indices",
    "write_fleet_csv",
]
