"""TV-regularized CP decomposition of complex space x echo x motion tensors."""

from .config import Settings, SolverConfig
from .phantom import PhantomConfig
from .solver import CpdTvResult, Diagnostics, solve_cpdtv
from .tensor import FactorSet

__all__ = [
    "CpdTvResult",
    "Diagnostics",
    "FactorSet",
    "PhantomConfig",
    "Settings",
    "SolverConfig",
    "solve_cpdtv",
]
