"""Estimation of an outcome mean missing not at random, using an instrumental variable."""
from .data import Dataset, Observation
from .efficiency import estimate_efficient
from .errors import *  # noqa: F401,F403
from .estimators import (FitResult, estimate, estimate_many, fit_cc_outcome, fit_iv_density,
                         sandwich_variance)
from .identification import (BinaryFullLaw, construct_equivalent_law, observed_law,
                             probe_no_interaction_identifiability)
from .kernels import BACKEND
from .model import Design, ModelConfig, default_config, expit, logit
from .moments import EstimatorKind, InstrumentChoice
from .simharness import ScenarioKind, ScenarioSpec, generate_dataset, run_study
from .solver import SolveOptions

__version__ = "0.1.0"
