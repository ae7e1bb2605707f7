"""Non-exhaustive learning with layered Dirichlet-process Gaussian mixtures.

Three collapsed Gibbs samplers share one engine: a single-layer conjugate
mixture (igmm), a two-layer mixture where classes own sets of components
(i2gmm), and the same two-layer model with its shared hyper-parameters
re-estimated every sweep (ai2gmm). Labeled points stay pinned to their
class while unlabeled points may join known classes or open new ones.
"""

from .engine import (
    AI2GMM,
    I2GMM,
    IGMM,
    OUTCOME_COMPONENT,
    OUTCOME_NEW_CLASS,
    OUTCOME_STANDARD,
    NELConfig,
    RunResult,
    classify_outcomes,
    flag_outliers,
    preinference,
    run_nel,
)
from .evaldata import (
    ConfusionMatrix,
    SplitSchedule,
    SynthConfig,
    build_confusion,
    generate_synthetic,
    make_split,
    mean_f1,
    normalize_zscore,
    observed_schedule,
    per_class_f1,
)
from .hypers import HyperPriorConfig, HyperState, estimate_hypers, refresh_hidden_estimates
from .niw import NIWParams, SuffStats
from .partition import LabelInfo, MixtureState, gibbs_sweep, log_joint

__version__ = "0.1.0"

__all__ = [
    "AI2GMM",
    "I2GMM",
    "IGMM",
    "OUTCOME_COMPONENT",
    "OUTCOME_NEW_CLASS",
    "OUTCOME_STANDARD",
    "ConfusionMatrix",
    "HyperPriorConfig",
    "HyperState",
    "LabelInfo",
    "MixtureState",
    "NELConfig",
    "NIWParams",
    "RunResult",
    "SplitSchedule",
    "SuffStats",
    "SynthConfig",
    "build_confusion",
    "classify_outcomes",
    "estimate_hypers",
    "flag_outliers",
    "generate_synthetic",
    "gibbs_sweep",
    "log_joint",
    "make_split",
    "mean_f1",
    "normalize_zscore",
    "observed_schedule",
    "per_class_f1",
    "preinference",
    "refresh_hidden_estimates",
    "run_nel",
]
