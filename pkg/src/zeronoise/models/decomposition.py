"""Pathwise check of the May-Leonard stochastic decomposition formula.

The full system ``dy_i = y_i (1 - (A y)_i) dt + eps y_i o dW`` is compared with
``g(t) * Phi0(int_0^t g ds, y / g0)`` where ``g`` solves the stochastic
logistic equation ``dg = g (1 - g) dt + eps g o dW`` on the same Brownian path.
Both stochastic sides use the Stratonovich Heun scheme; the deterministic
flow is an RK4 table read through cubic Hermite interpolation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicHermiteSpline

from ..integrate import SimParams, flow, stratonovich_heun
from ..noise import RngStream, brownian_increments
from .zoo import zoo_build


@dataclass
class DecompositionResult:
    sup_error: float
    tolerance: float
    tolerance_pass: bool
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray


def decomposition_check(beta, gamma, g0, y, epsilon, params: SimParams, stream: RngStream,
                        tolerance: float = 1e-2) -> DecompositionResult:
    if not g0 > 0:
        raise ValueError("g0 must be positive")
    y = np.asarray(y, dtype=float)
    if y.shape != (3,) or np.any(y <= 0):
        raise ValueError("y must lie in the open positive octant")
    model = zoo_build("may_leonard", {"beta": beta, "gamma": gamma})
    logistic = zoo_build("logistic")
    run = params.with_(epsilon=epsilon, save_every=1)
    dW = brownian_increments(stream, 1, run.n_steps, run.dt)

    lhs = stratonovich_heun(model, y, run, dW)
    g_path = stratonovich_heun(logistic, np.array([g0]), run, dW)
    g = g_path.states[:, 0]
    clock = cumulative_trapezoid(g, lhs.times, initial=0.0)

    # deterministic flow from y / g0 on a uniform grid covering the rescaled clock
    horizon = max(float(clock[-1]), run.dt)
    n_det = int(np.ceil(horizon / run.dt)) + 1
    det_params = SimParams(dt=run.dt, t_final=n_det * run.dt)
    det = flow(model, y / g0, det_params)
    spline = CubicHermiteSpline(det.times, det.states, model.drift(det.states), axis=0)
    rhs = g[:, None] * spline(clock)

    err = float(np.max(np.linalg.norm(lhs.states - rhs, axis=-1)))
    return DecompositionResult(err, tolerance, err < tolerance, lhs.times, lhs.states, rhs)
