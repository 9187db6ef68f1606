from ._backend import BACKEND
from .core import (
    VAR_CEIL,
    VAR_FLOOR,
    GaussianHmm,
    TrainConfig,
    baum_welch,
    ergodic_transitions,
    fit,
    init_from_segments,
    log_likelihood,
    viterbi,
)

__all__ = [
    "BACKEND",
    "VAR_CEIL",
    "VAR_FLOOR",
    "GaussianHmm",
    "TrainConfig",
    "baum_welch",
    "ergodic_transitions",
    "fit",
    "init_from_segments",
    "log_likelihood",
    "viterbi",
]
