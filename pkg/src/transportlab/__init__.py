"""Stochastic transport laboratory on the flat torus."""

__version__ = "0.1.0"

from .fields import (  # noqa: F401
    VelocityModel,
    build_br,
    build_custom,
    build_kraichnan,
    covariance,
    covariance_closed_form,
    eval_hessian,
    eval_jacobian,
    eval_sigma,
    model_from_config,
    structural_checks,
)
from .flow import EnsembleConfig, FlowState, run_ensemble  # noqa: F401
from .noise import NoiseRealization  # noqa: F401
