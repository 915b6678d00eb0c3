"""Continued unrolled decoders for analysis-sparse compressed sensing."""
__version__ = "0.1.0"

from .continuation import continued_decoder, continued_solve, run_continuation
from .errors import DivergenceError, FormatError, InvalidArgument, TrainingError
from .solver import SensingProblem, SolverConfig, solve
from .train import TrainConfig, evaluate, train
from .unfolded import UnrolledDecoder, backward, forward, make_decoder

__all__ = [
    "DivergenceError", "FormatError", "InvalidArgument", "TrainingError",
    "SensingProblem", "SolverConfig", "solve",
    "UnrolledDecoder", "make_decoder", "forward", "backward",
    "continued_decoder", "continued_solve", "run_continuation",
    "TrainConfig", "train", "evaluate",
]
