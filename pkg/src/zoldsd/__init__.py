"""Zeroth-order optimization with learnable direction sampling."""
from .objective import (CountingOracle, Dataset, DatasetError, ObjectiveOracle, least_squares_objective,
                        load_libsvm, logistic_objective, parse_libsvm, quadratic_objective, synthetic_a9a)
from .sampling import SamplingPolicy, alignment, make_rng, normalize, sample_directions
from .optimizers import OptimizerConfig, PluginRule, StepSizes, run

__version__ = "0.1.0"
