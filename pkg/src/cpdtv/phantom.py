"""Synthetic multi-echo, multi-motion-state phantoms and undersampling artifacts.

Voxel ``(x, y, z)`` of an ``(nx, ny, nz)`` grid maps to spatial index
``x + nx * (y + ny * z)``. Ellipsoid geometry is given in normalized coordinates
(each axis spans [-1, 1] across the grid); z is the superior-inferior axis along
which the respiratory motion translates the object.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.fft
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt
from scipy.optimize import brentq

from .tensor import ComplexTensor3, as_tensor3


logger = logging.getLogger(__name__)

CENTER_RADIUS = 0.08
GATING_ACCEPTANCE = 0.17


class Ellipse(BaseModel):
    model_config = ConfigDict(frozen=True)

    center: tuple[float, float, float]
    semi_axes: tuple[PositiveFloat, PositiveFloat, PositiveFloat]
    density: float
    r2star: float = Field(default=0.0, description="Decay rate in 1/ms.")
    off_resonance: float = Field(default=0.0, description="Frequency offset in kHz.")


def default_ellipses() -> list[Ellipse]:
    """Torso-like arrangement: body, liver, lungs, spine and a vessel."""
    shared_offset = 0.01
    return [
        Ellipse(center=(0.0, 0.0, 0.0), semi_axes=(0.9, 0.7, 0.95), density=0.4,
                r2star=0.03, off_resonance=shared_offset),
        Ellipse(center=(-0.3, 0.05, -0.25), semi_axes=(0.45, 0.4, 0.55), density=0.5,
                r2star=0.06, off_resonance=shared_offset),
        Ellipse(center=(0.35, 0.1, 0.45), semi_axes=(0.3, 0.35, 0.4), density=0.1,
                r2star=0.3, off_resonance=shared_offset),
        Ellipse(center=(-0.35, 0.1, 0.55), semi_axes=(0.28, 0.33, 0.35), density=0.1,
                r2star=0.3, off_resonance=shared_offset),
        Ellipse(center=(0.0, -0.55, 0.0), semi_axes=(0.12, 0.12, 0.9), density=0.3,
                r2star=0.02, off_resonance=shared_offset),
        Ellipse(center=(0.15, -0.1, -0.1), semi_axes=(0.08, 0.08, 0.6), density=0.6,
                r2star=0.015, off_resonance=shared_offset),
    ]


class PhantomConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    grid: tuple[PositiveInt, PositiveInt, PositiveInt] = (32, 32, 8)
    echoes: int = Field(default=6, ge=1)
    states: int = Field(default=6, ge=1)
    te_first: float = Field(default=0.032, gt=0.0, description="First echo time in ms.")
    delta_te: float = Field(default=1.4, gt=0.0, description="Echo spacing in ms.")
    ellipses: list[Ellipse] = Field(default_factory=default_ellipses)
    motion_amplitude: float = Field(default=1.5, ge=0.0, description="Peak shift in voxels.")
    acceleration: float = Field(default=6.0, ge=1.0)
    seed: int = Field(default=0, ge=0, le=2**64 - 1)

    @property
    def voxels(self) -> int:
        nx, ny, nz = self.grid
        return nx * ny * nz


def te_values(cfg: PhantomConfig) -> np.ndarray:
    """Echo times in ms."""
    return cfg.te_first + cfg.delta_te * np.arange(cfg.echoes)


def motion_offsets(cfg: PhantomConfig) -> np.ndarray:
    """Superior-inferior shift of each motion state, in voxels."""
    return cfg.motion_amplitude * np.sin(2.0 * np.pi * np.arange(cfg.states) / cfg.states)


def _normalized_axes(grid: tuple[int, int, int]) -> list[np.ndarray]:
    return [(np.arange(n) - (n - 1) / 2.0) / (n / 2.0) for n in grid]


def generate_phantom(cfg: PhantomConfig) -> ComplexTensor3:
    """Ground-truth tensor of shape ``(nx*ny*nz, echoes, states)``.

    Each ellipsoid contributes ``density * exp(-r2star * TE) * exp(2j*pi*f0*TE)``
    inside its (motion-shifted) support.
    """
    nx, ny, nz = cfg.grid
    ux, uy, uz = np.meshgrid(*_normalized_axes(cfg.grid), indexing="ij")
    tes = te_values(cfg)
    shifts = motion_offsets(cfg) / (nz / 2.0)
    X = np.zeros((cfg.voxels, cfg.echoes, cfg.states), dtype=np.complex128, order="F")

    for ellipse in cfg.ellipses:
        evolution = (
            ellipse.density
            * np.exp(-ellipse.r2star * tes)
            * np.exp(2j * np.pi * ellipse.off_resonance * tes)
        )
        cx, cy, cz = ellipse.center
        ax, ay, az = ellipse.semi_axes
        for k, shift in enumerate(shifts):
            inside = (
                ((ux - cx) / ax) ** 2 + ((uy - cy) / ay) ** 2 + ((uz - cz - shift) / az) ** 2
            ) <= 1.0
            support = np.reshape(inside, -1, order="F")
            X[support, :, k] += evolution
    logger.debug("phantom %s with %s ellipsoids generated", cfg.grid, len(cfg.ellipses))
    return as_tensor3(X)


def _radius(shape: tuple[int, int, int]) -> np.ndarray:
    """Per-axis normalized k-space radius; 1 at the half-width along each axis."""
    freqs = [scipy.fft.fftfreq(n) / 0.5 for n in shape]
    kx, ky, kz = np.meshgrid(*freqs, indexing="ij")
    return np.sqrt(kx**2 + ky**2 + kz**2)


def sampling_mask(
    shape: tuple[int, int, int], acceleration: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Variable-density random k-space mask (unshifted FFT layout) and its weights.

    The ball of radius ``CENTER_RADIUS`` is always kept with weight 1. Outer
    locations are kept with probability ``min(1, beta * density)``, ``beta``
    calibrated so the expected kept fraction is ``1 / acceleration``; kept outer
    samples are weighted by the inverse of that probability.
    """
    if acceleration < 1:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    radius = _radius(shape)
    total = radius.size
    center = radius <= CENTER_RADIUS
    budget = total / acceleration
    n_center = int(np.count_nonzero(center))
    if n_center > budget:
        raise ValueError(
            f"acceleration {acceleration} leaves {budget:.0f} samples, fewer than the "
            f"{n_center} of the fully sampled center"
        )

    density = np.maximum((1.0 - radius / radius.max()) ** 2, 0.05)[~center]
    target = budget - n_center
    if target >= density.size:
        probability = np.ones_like(density)
    elif target <= 0:
        probability = np.zeros_like(density)
    else:
        def excess(beta: float) -> float:
            return float(np.minimum(1.0, beta * density).sum() - target)

        beta = brentq(excess, 0.0, 1.0 / density.min())
        probability = np.minimum(1.0, beta * density)

    keep_outer = rng.random(density.size) < probability
    mask = center.copy()
    mask[~center] = keep_outer
    weights = np.zeros(shape)
    weights[center] = 1.0
    outer_weights = np.zeros_like(probability)
    outer_weights[keep_outer] = 1.0 / probability[keep_outer]
    weights[~center] = outer_weights
    logger.debug(
        "mask %s at R=%s: kept %.4f (target %.4f), center %s",
        shape,
        acceleration,
        mask.mean(),
        1.0 / acceleration,
        n_center,
    )
    return mask, weights


def inject_undersampling(
    X_true: ComplexTensor3,
    grid: tuple[int, int, int],
    acceleration: float,
    seed: int,
    *,
    workers: int = 1,
) -> ComplexTensor3:
    """Zero-filled, density-compensated reconstruction of each (echo, state) volume."""
    if acceleration < 1:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    N, E, T = X_true.shape
    nx, ny, nz = grid
    if nx * ny * nz != N:
        raise ValueError(f"grid {grid} does not factor {N} voxels")
    Y = np.empty_like(X_true, order="F")
    for k in range(T):
        for j in range(E):
            rng = np.random.default_rng([seed, j, k])
            _, weights = sampling_mask((nx, ny, nz), acceleration, rng)
            volume = np.reshape(X_true[:, j, k], (nx, ny, nz), order="F")
            kspace = scipy.fft.fftn(volume, workers=workers)
            image = scipy.fft.ifftn(kspace * weights, workers=workers)
            Y[:, j, k] = np.reshape(image, -1, order="F")
    return as_tensor3(Y)


def simulate(cfg: PhantomConfig, *, workers: int = 1) -> tuple[ComplexTensor3, ComplexTensor3]:
    """Ground truth and its undersampled counterpart for ``cfg``."""
    X_true = generate_phantom(cfg)
    Y = inject_undersampling(X_true, cfg.grid, cfg.acceleration, cfg.seed, workers=workers)
    return X_true, Y


def hard_gating(
    X_true: ComplexTensor3,
    grid: tuple[int, int, int],
    acceleration: float,
    seed: int,
    *,
    acceptance: float = GATING_ACCEPTANCE,
    state: int = 0,
    workers: int = 1,
) -> ComplexTensor3:
    """Hard-gated baseline: only the data of one motion state is kept.

    Every state of the free-breathing acquisition is undersampled by
    ``acceleration``, so the whole acquisition holds ``T / acceleration``
    volumes of k-space. Gating accepts the fraction ``acceptance`` of it for
    ``state``, which is reconstructed at acceleration
    ``acceleration / (acceptance * T)`` (at least 1) and repeated across all
    states.
    """
    T = X_true.shape[2]
    if not 0.0 < acceptance <= 1.0:
        raise ValueError(f"acceptance must lie in (0, 1], got {acceptance}")
    if not 0 <= state < T:
        raise ValueError(f"state {state} out of range for {T} motion states")
    gated_acceleration = max(1.0, acceleration / (acceptance * T))
    logger.info(
        "hard gating state %s at acceptance %.3f: acceleration %.3f", state, acceptance, gated_acceleration
    )
    gated = inject_undersampling(
        X_true[:, :, state : state + 1], grid, gated_acceleration, seed, workers=workers
    )
    return as_tensor3(np.repeat(gated, T, axis=2))


__all__ = [
    "CENTER_RADIUS",
    "Ellipse",
    "GATING_ACCEPTANCE",
    "PhantomConfig",
    "default_ellipses",
    "generate_phantom",
    "hard_gating",
    "inject_undersampling",
    "motion_offsets",
    "sampling_mask",
    "simulate",
    "te_values",
]
