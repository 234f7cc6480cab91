"""Complex 3-way tensors and the multilinear algebra the solver is built on.

A tensor is a ``numpy`` array of shape ``(N, E, T)`` (space, echo, motion
state) holding ``complex128`` values in Fortran order, so element ``(i, j, k)``
sits at linear offset ``(k * E + j) * N + i`` and the mode-1 unfolding is a
reshape. Modes are numbered 1..3.

Unfoldings follow the convention in which the lower-numbered remaining mode
varies fastest along the columns, which makes

    unfold(X, 1) == A @ khatri_rao(C, B).T
    unfold(X, 2) == B @ khatri_rao(C, A).T
    unfold(X, 3) == C @ khatri_rao(B, A).T

hold for ``X = cpd_synthesize(FactorSet(A, B, C))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
import numpy.typing as npt

ComplexTensor3: TypeAlias = npt.NDArray[np.complex128]
ComplexMatrix: TypeAlias = npt.NDArray[np.complex128]
Dims: TypeAlias = tuple[int, int, int]

# Axis order that brings the mode to the front while keeping the others ascending.
_MODE_AXES: dict[int, tuple[int, int, int]] = {1: (0, 1, 2), 2: (1, 0, 2), 3: (2, 0, 1)}


def _mode_axes(mode: int) -> tuple[int, int, int]:
    try:
        return _MODE_AXES[mode]
    except (KeyError, TypeError):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}") from None


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite entries")


def as_tensor3(data: npt.ArrayLike, dims: Dims | None = None) -> ComplexTensor3:
    """Validate ``data`` as a complex 3-way tensor.

    With ``dims`` the input may also be flat data in storage order (space
    fastest, then echo, then motion).
    """
    array = np.asarray(data, dtype=np.complex128)
    if dims is not None:
        dims = tuple(int(d) for d in dims)  # type: ignore[assignment]
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive counts, got {dims}")
        if array.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"data of length {array.size} does not match dims {dims}")
        array = np.reshape(array, dims, order="F")
    if array.ndim != 3 or min(array.shape) < 1:
        raise ValueError(f"expected a non-empty 3-way array, got shape {array.shape}")
    _check_finite(array, "tensor")
    return np.asfortranarray(array)


def unfold_shape(dims: Dims, mode: int) -> tuple[int, int]:
    axes = _mode_axes(mode)
    rows = dims[axes[0]]
    return rows, dims[axes[1]] * dims[axes[2]]


def unfold(X: ComplexTensor3, mode: int) -> ComplexMatrix:
    """Mode-``mode`` unfolding: N×(E·T), E×(N·T) or T×(N·E)."""
    axes = _mode_axes(mode)
    if X.ndim != 3:
        raise ValueError(f"expected a 3-way tensor, got shape {X.shape}")
    return np.reshape(np.transpose(X, axes), unfold_shape(X.shape, mode), order="F")


def fold(M: ComplexMatrix, mode: int, dims: Dims) -> ComplexTensor3:
    """Inverse of :func:`unfold`."""
    axes = _mode_axes(mode)
    dims = tuple(int(d) for d in dims)  # type: ignore[assignment]
    expected = unfold_shape(dims, mode)
    if M.shape != expected:
        raise ValueError(f"mode-{mode} unfolding of {dims} has shape {expected}, got {M.shape}")
    permuted = np.reshape(M, tuple(dims[a] for a in axes), order="F")
    return np.asfortranarray(np.transpose(permuted, np.argsort(axes)))


def khatri_rao(P: ComplexMatrix, Q: ComplexMatrix) -> ComplexMatrix:
    """Column-wise Kronecker product; row ``p * Q.shape[0] + q`` holds ``P[p] * Q[q]``."""
    if P.ndim != 2 or Q.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if P.shape[1] != Q.shape[1]:
        raise ValueError(f"column counts differ: {P.shape[1]} != {Q.shape[1]}")
    m, rank = P.shape
    n = Q.shape[0]
    return np.reshape(P[:, None, :] * Q[None, :, :], (m * n, rank))


@dataclass(slots=True, frozen=True)
class FactorSet:
    """Factor matrices of ``X = sum_r a_r ∘ b_r ∘ c_r``."""

    A: ComplexMatrix
    B: ComplexMatrix
    C: ComplexMatrix

    def __post_init__(self) -> None:
        for name in ("A", "B", "C"):
            matrix = np.asarray(getattr(self, name), dtype=np.complex128)
            if matrix.ndim != 2 or min(matrix.shape) < 1:
                raise ValueError(f"factor {name} must be a non-empty matrix, got {matrix.shape}")
            _check_finite(matrix, f"factor {name}")
            object.__setattr__(self, name, matrix)
        ranks = {self.A.shape[1], self.B.shape[1], self.C.shape[1]}
        if len(ranks) != 1:
            raise ValueError(
                f"factor column counts differ: {self.A.shape[1]}, {self.B.shape[1]}, {self.C.shape[1]}"
            )

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self) -> Dims:
        return self.A.shape[0], self.B.shape[0], self.C.shape[0]

    def factor(self, mode: int) -> ComplexMatrix:
        return (self.A, self.B, self.C)[_mode_axes(mode)[0]]

    def replace(self, mode: int, matrix: ComplexMatrix) -> FactorSet:
        factors = [self.A, self.B, self.C]
        factors[_mode_axes(mode)[0]] = matrix
        return FactorSet(*factors)

    def copy(self) -> FactorSet:
        return FactorSet(self.A.copy(), self.B.copy(), self.C.copy())


def mode_khatri_rao(F: FactorSet, mode: int) -> ComplexMatrix:
    """Khatri-Rao product of the two factors other than ``mode``, in unfolding order."""
    if mode == 1:
        return khatri_rao(F.C, F.B)
    if mode == 2:
        return khatri_rao(F.C, F.A)
    if mode == 3:
        return khatri_rao(F.B, F.A)
    raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def cpd_synthesize(F: FactorSet) -> ComplexTensor3:
    """``X(i, j, k) = sum_r A(i, r) B(j, r) C(k, r)``."""
    return fold(F.A @ khatri_rao(F.C, F.B).T, 1, F.dims)


def frobenius_norm(X: ComplexTensor3) -> float:
    return float(np.linalg.norm(np.ravel(X, order="K")))


def random_factors(dims: Dims, rank: int, rng: np.random.Generator) -> FactorSet:
    """Complex standard normal factors (unit variance per entry)."""
    if rank < 1:
        raise ValueError(f"rank must be positive, got {rank}")
    factors = [
        (rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))) / np.sqrt(2.0)
        for n in dims
    ]
    return FactorSet(*factors)


__all__ = [
    "ComplexMatrix",
    "ComplexTensor3",
    "Dims",
    "FactorSet",
    "as_tensor3",
    "cpd_synthesize",
    "fold",
    "frobenius_norm",
    "khatri_rao",
    "mode_khatri_rao",
    "random_factors",
    "unfold",
    "unfold_shape",
]
