"""Multi-scale KAM engine: Taylor-Fourier normal forms, small-divisor solves and checks."""
from .errors import *  # noqa: F401,F403
from .tfseries import (AnalyticDomain, MultiIndex, ParamCoefficient, TFSeries,
                       average, cauchy_shrink_bound, poisson_bracket, truncate,
                       weighted_norm)

__version__ = "0.1.0"
