"""Pluggable error-feedback training (BP, FA, DFA, SF, KP, PFA, PFA-o) in numpy."""

from .errors import (
    ConfigError,
    ContractError,
    DatasetError,
    DimensionError,
    NumericError,
    PfaError,
    StateError,
    UndefinedMetricError,
)
from .feedback import (
    BP,
    DFA,
    FA,
    KP,
    PFA,
    PFA_O,
    SF,
    FeedbackAlgorithm,
    apply_updates,
    backward,
    compute_updates,
    init_feedback,
)
from .metrics import alignment_angle, layer_diagnostics, norm_ratio, weight_correlation
from .netcore import Network, build_network, forward, loss_and_output_error
from .optim import Schedule, SgdState, advance_epoch, step
from .runner import ExperimentConfig, RunSummary, load_preset, train

__version__ = "0.1.0"
