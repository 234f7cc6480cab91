"""Total variation along the echo and motion-state dimensions.

Differences are non-circular forward differences, ``X[:, j+1, :] - X[:, j, :]``
for ``j = 0 .. E-2`` (motion likewise); the first and last echo or motion state
are not treated as neighbours. ``|.|`` is the complex modulus.
"""

from __future__ import annotations

from typing import Literal

import numpy as np

from .config import TvVariant
from .tensor import ComplexTensor3

TvDim = Literal["echo", "motion"]

_AXIS: dict[str, int] = {"echo": 1, "motion": 2}


def _axis(dim: str) -> int:
    try:
        return _AXIS[dim]
    except KeyError:
        raise ValueError(f"dim must be 'echo' or 'motion', got {dim!r}") from None


def difference(X: ComplexTensor3, dim: TvDim) -> np.ndarray:
    """Forward difference along ``dim``; one entry shorter along that axis."""
    return np.diff(X, axis=_axis(dim))


def difference_adjoint(D: np.ndarray, dim: TvDim) -> ComplexTensor3:
    """Hermitian adjoint of :func:`difference` (negative divergence, zero flux)."""
    axis = _axis(dim)
    pad = [(0, 0)] * D.ndim
    pad[axis] = (1, 1)
    return np.asfortranarray(-np.diff(np.pad(D, pad), axis=axis))


def tv_echo(X: ComplexTensor3) -> float:
    return float(np.sum(np.abs(difference(X, "echo"))))


def tv_motion(X: ComplexTensor3) -> float:
    return float(np.sum(np.abs(difference(X, "motion"))))


def smoothed_tv(X: ComplexTensor3, dim: TvDim, epsilon: float) -> float:
    """``sum(sqrt(|dX|^2 + eps^2) - eps)``; zero iff X is constant along ``dim``."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    D = difference(X, dim)
    # hypot keeps the small-difference regime accurate
    return float(np.sum(np.hypot(np.abs(D), epsilon) - epsilon))


def tv_value(X: ComplexTensor3, dim: TvDim, variant: TvVariant, epsilon: float) -> float:
    """The TV value the objective uses for ``variant``."""
    if TvVariant(variant) is TvVariant.SMOOTHED_L1:
        return smoothed_tv(X, dim, epsilon)
    return float(np.sum(np.abs(difference(X, dim))))


def tv_gradient(
    X: ComplexTensor3, dim: TvDim, variant: TvVariant, epsilon: float
) -> ComplexTensor3:
    """Gradient of the TV term with respect to X, descent convention.

    ``smoothed_l1`` is the exact gradient of :func:`smoothed_tv`;
    ``paper`` is the normalized Laplacian ``dᴴd X / ||d X||_1`` and is zero when
    ``||d X||_1 == 0``.
    """
    D = difference(X, dim)
    if TvVariant(variant) is TvVariant.SMOOTHED_L1:
        if epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        return difference_adjoint(D / np.hypot(np.abs(D), epsilon), dim)
    l1 = float(np.sum(np.abs(D)))
    if l1 == 0.0:
        return np.zeros_like(X, order="F")
    return difference_adjoint(D, dim) / l1


__all__ = [
    "TvDim",
    "difference",
    "difference_adjoint",
    "smoothed_tv",
    "tv_echo",
    "tv_gradient",
    "tv_motion",
    "tv_value",
]
