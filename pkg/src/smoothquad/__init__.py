"""Numerical smoothing for pricing low-regularity payoffs with sparse grids, lattice rules and MC."""
from .estimators import (AsgqConfig, ErrorDecomposition, Method, PricingPlan, SmoothingPricer, WorkAdvice,
                         WorkModelParams, error_decomposition, price, richardson, work_advisor)
from .hierarchy import PathGrid, build_rotation
from .models import GbmSpec, HestonScheme, HestonSpec, ParameterError
from .payoffs import PayoffSpec, make_basket_call, make_call, make_digital, make_put
from .reference import reference_price
from .sampling import ConfigError, Estimate, LatticeConfig, McConfig
from .smoothing import SmoothingConfig

__all__ = [
    "AsgqConfig", "ConfigError", "ErrorDecomposition", "Estimate", "GbmSpec", "HestonScheme", "HestonSpec",
    "LatticeConfig", "McConfig", "Method", "ParameterError", "PathGrid", "PayoffSpec", "PricingPlan",
    "SmoothingConfig", "SmoothingPricer", "WorkAdvice", "WorkModelParams", "build_rotation", "error_decomposition",
    "make_basket_call", "make_call", "make_digital", "make_put", "price", "reference_price", "richardson",
    "work_advisor",
]
__version__ = "0.1.0"
