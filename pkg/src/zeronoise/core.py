"""Model, jump-catalogue and path containers plus model-level transforms.

Every callable stored on a :class:`ModelSpec` is vectorised over leading
axes: ``drift`` maps ``(..., m) -> (..., m)``, ``diffusion`` maps
``(..., m) -> (..., m, k)``, ``drift_jacobian`` maps ``(..., m) -> (..., m, m)``
and ``diffusion_jacobian`` maps ``(..., m) -> (..., m, k, m)`` with entry
``[i, j, l] = d sigma_ij / d x_l``.  The noise intensity epsilon is never
stored on a model.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, MissingJacobian, NonFiniteOutput

ITO = "ito"
STRATONOVICH = "stratonovich"

ArrayFn = Callable[[np.ndarray], np.ndarray]


def as_state(x, m: Optional[int] = None) -> np.ndarray:
    """Coerce ``x`` to a float array whose last axis has length ``m``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if m is not None and arr.shape[-1] != m:
        raise DimensionMismatch(f"expected state dimension {m}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteOutput("state contains non-finite entries")
    return arr


@dataclass(frozen=True)
class JumpCatalogue:
    """Finite atomic intensity measure with a jump map.

    ``marks`` has shape ``(n_atoms, l)``; ``rates`` holds the atom weights.
    ``jump_map(x, y)`` broadcasts over leading axes of both arguments.
    """

    marks: np.ndarray
    rates: np.ndarray
    jump_map: Callable[[np.ndarray, np.ndarray], np.ndarray]
    truncation_radius: float = np.inf

    def __post_init__(self):
        marks = np.atleast_2d(np.asarray(self.marks, dtype=float))
        rates = np.atleast_1d(np.asarray(self.rates, dtype=float))
        if marks.shape[0] != rates.shape[0]:
            raise DimensionMismatch("one rate per mark required")
        if np.any(rates <= 0) or not np.all(np.isfinite(rates)):
            raise ValueError("jump rates must be positive and finite")
        if marks.size and np.any(np.linalg.norm(marks, axis=1) >= self.truncation_radius):
            raise ValueError("every mark must lie inside the truncation radius")
        marks.setflags(write=False)
        rates.setflags(write=False)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "rates", rates)

    @property
    def l(self) -> int:
        return self.marks.shape[1]

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum())

    def __len__(self):
        return self.rates.shape[0]

    def compensator(self, x: np.ndarray) -> np.ndarray:
        """Sum over atoms of ``F(x, y_j) * w_j``."""
        out = np.zeros_like(x)
        for y, w in zip(self.marks, self.rates):
            out = out + w * self.jump_map(x, y)
        return out


@dataclass(frozen=True)
class ModelSpec:
    m: int
    k: int
    drift: ArrayFn
    diffusion: ArrayFn
    jumps: Optional[JumpCatalogue] = None
    noise_kind: str = ITO
    drift_jacobian: Optional[ArrayFn] = None
    diffusion_jacobian: Optional[ArrayFn] = None
    # Stratonovich-to-Ito drift correction per unit epsilon**2.  Zoo models
    # with Stratonovich noise precompute it analytically.
    ito_correction: Optional[ArrayFn] = None
    label: str = ""
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.noise_kind not in (ITO, STRATONOVICH):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if self.m < 1 or self.k < 0:
            raise ValueError("m must be >= 1 and k >= 0")
        if (self.noise_kind == STRATONOVICH and self.diffusion_jacobian is None
                and self.ito_correction is None):
            raise MissingJacobian(
                "a Stratonovich model needs diffusion_jacobian or a precomputed ito_correction")

    def effective_drift(self, x: np.ndarray, epsilon: float) -> np.ndarray:
        """Ito drift at noise level ``epsilon`` (adds the scaled correction)."""
        b = self.drift(x)
        if epsilon != 0.0:
            correction = self.ito_correction
            if correction is None and self.noise_kind == STRATONOVICH:
                correction = ito_correction_from_jacobian(self.diffusion, self.diffusion_jacobian)
            if correction is not None:
                b = b + epsilon ** 2 * correction(x)
        return b


@dataclass
class NoiseRecord:
    """Driving noise of one path: Brownian increments per step plus jumps.

    ``jumps`` lists ``(step_index, atom_index)`` pairs, the event being
    applied during the step that starts at ``times[step_index]``.
    """

    dW: np.ndarray
    jumps: list = field(default_factory=list)


@dataclass
class PathSample:
    times: np.ndarray
    states: np.ndarray
    noise_record: Optional[NoiseRecord] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.states.shape[0] != self.times.shape[0]:
            raise DimensionMismatch("states must be aligned with times")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return self.times.shape[0]

    @property
    def last(self) -> np.ndarray:
        return self.states[-1]


def eval_drift(model: ModelSpec, x) -> np.ndarray:
    x = as_state(x, model.m)
    out = np.asarray(model.drift(x), dtype=float)
    if out.shape != x.shape:
        raise DimensionMismatch(f"drift returned shape {out.shape} for input {x.shape}")
    if not np.all(np.isfinite(out)):
        raise NonFiniteOutput(f"drift of {model.label or 'model'} is not finite at {x}")
    return out


def default_step(x: np.ndarray, scale: float = 1e-5) -> np.ndarray:
    return scale * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))


def jacobian_fd(f: ArrayFn, x, h=None) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x`` (batched over leading axes).

    ``h`` defaults to ``1e-5 * (1 + |x|)``.
    """
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    if h is None:
        h = default_step(x)
    else:
        h = np.broadcast_to(np.asarray(h, dtype=float), x.shape[:-1] + (1,))
        if np.any(h <= 0):
            raise ValueError("finite-difference step must be positive")
    cols = []
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        col = (np.asarray(f(x + h * e)) - np.asarray(f(x - h * e))) / (2.0 * h)
        cols.append(col)
    jac = np.stack(cols, axis=-1)
    if not np.all(np.isfinite(jac)):
        raise NonFiniteOutput("finite-difference Jacobian is not finite")
    return jac


def drift_jacobian(model: ModelSpec, x, epsilon: float = 0.0) -> np.ndarray:
    """Analytic Jacobian of the (effective) drift when available, else FD."""
    x = as_state(x, model.m)
    uncorrected = model.ito_correction is None and model.noise_kind == ITO
    if model.drift_jacobian is not None and (epsilon == 0.0 or uncorrected):
        return np.asarray(model.drift_jacobian(x), dtype=float)
    return jacobian_fd(lambda z: model.effective_drift(z, epsilon), x)


def diffusion_jacobian(model: ModelSpec, x) -> np.ndarray:
    """``(..., m, k, m)`` derivative of the diffusion matrix."""
    x = as_state(x, model.m)
    if model.diffusion_jacobian is not None:
        return np.asarray(model.diffusion_jacobian(x), dtype=float)
    flat = lambda z: model.diffusion(z).reshape(z.shape[:-1] + (model.m * model.k,))
    jac = jacobian_fd(flat, x)
    return jac.reshape(x.shape[:-1] + (model.m, model.k, model.m))


def ito_correction_from_jacobian(diffusion: ArrayFn, diffusion_jac: ArrayFn) -> ArrayFn:
    """``c_i(x) = 1/2 * sum_{j,l} d sigma_ij/d x_l * sigma_lj``."""

    def correction(x):
        return 0.5 * np.einsum("...ijl,...lj->...i", diffusion_jac(x), diffusion(x))

    return correction


def stratonovich_to_ito(model: ModelSpec) -> ModelSpec:
    """Return the Ito form of a Stratonovich model.

    The correction is stored per unit epsilon**2 and scaled at integration
    time, so the converted model still serves a whole epsilon sweep.
    """
    if model.noise_kind == ITO:
        raise ValueError("model is already in Ito form")
    correction = model.ito_correction
    if correction is None:
        if model.diffusion_jacobian is None:
            raise MissingJacobian("diffusion_jacobian is required for conversion")
        correction = ito_correction_from_jacobian(model.diffusion, model.diffusion_jacobian)
    return replace(model, noise_kind=ITO, ito_correction=correction)


def constant_diffusion(matrix) -> tuple:
    """``(diffusion, diffusion_jacobian)`` pair for a state-independent matrix."""
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    m, k = mat.shape

    def diffusion(x):
        return np.broadcast_to(mat, x.shape[:-1] + (m, k))

    def diffusion_jac(x):
        return np.zeros(x.shape[:-1] + (m, k, m))

    return diffusion, diffusion_jac


def additive_jumps(marks, rates, truncation_radius=np.inf) -> JumpCatalogue:
    """Catalogue whose jump map is ``F(x, y) = y`` (marks live in state space)."""

    def jump_map(x, y):
        return np.broadcast_to(y, np.broadcast_shapes(x.shape, np.shape(y))).copy()

    return JumpCatalogue(marks=marks, rates=rates, jump_map=jump_map,
                         truncation_radius=truncation_radius)
