"""Monte Carlo gradients of ``x -> E phi(X_t^x)``: variational flow,
Bismut-Elworthy-Li weights and a common-random-number finite-difference oracle.

Only diffusion models (no jump catalogue) are supported.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ITO, ModelSpec, PathSample, as_state, diffusion_jacobian, drift_jacobian
from .errors import (DegenerateDiffusion, JumpsUnsupported, MissingNoiseRecord,
                     StratonovichNotConverted)
from .integrate import EnsembleJob, SimParams, map_batches, simulate_batch
from .noise import BrownianSource, derive_stream

CONDITION_LIMIT = 1e8
GRADIENT_BATCH = 1024


def _check_model(model: ModelSpec):
    if model.jumps is not None and len(model.jumps):
        raise JumpsUnsupported("gradient estimators support diffusion models only")
    if model.noise_kind != ITO:
        raise StratonovichNotConverted("convert the model with stratonovich_to_ito first")


def _matvec(a, v):
    # row-wise product without BLAS so results never depend on the batch layout
    return np.sum(a * v[..., None, :], axis=-1)


def _dsigma_dw(dsig, eta, dW):
    """``sum_j (D sigma_{.j}(x) eta) dW_j`` for ``dsig[..., i, j, l]``."""
    return np.sum(np.sum(dsig * eta[..., None, None, :], axis=-1) * dW[..., None, :], axis=-1)


@dataclass
class VariationalPath:
    base: PathSample
    eta: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        if not np.array_equal(self.eta[0], self.h):
            raise ValueError("eta must start at h")
        if not np.all(np.isfinite(self.eta)):
            raise FloatingPointError("eta is not finite")


def variational_path(model: ModelSpec, base: PathSample, h, epsilon: float) -> VariationalPath:
    """Euler recursion for ``eta = D_x X(t, x) h`` on the recorded noise.

    ``base`` must be saved at every step (``save_every == 1``).
    """
    _check_model(model)
    if base.noise_record is None:
        raise MissingNoiseRecord("base path has no noise record; simulate with record_noise=True")
    dW = base.noise_record.dW
    n = dW.shape[0]
    if len(base) != n + 1:
        raise ValueError("base path must be saved at every step")
    h = as_state(h, model.m)
    dt = float(base.times[1] - base.times[0])
    eta = np.empty((n + 1, model.m))
    eta[0] = h
    constant = bool(model.params.get("constant_diffusion", False))
    for i in range(n):
        x = base.states[i]
        step = _matvec(drift_jacobian(model, x, epsilon), eta[i]) * dt
        if epsilon != 0.0 and model.k and not constant:
            step = step + epsilon * _dsigma_dw(diffusion_jacobian(model, x), eta[i], dW[i])
        eta[i + 1] = eta[i] + step
    return VariationalPath(base, eta, h)


@dataclass
class GradientEstimate:
    estimate: float
    std_error: float
    n_paths: int
    dt: float
    method: str

    def row(self):
        return [repr(float(self.estimate)), repr(float(self.std_error)), self.n_paths,
                repr(float(self.dt)), self.method]


def gradient_csv(estimates) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimate", "std_error", "n_paths", "dt", "method"])
    for e in estimates:
        w.writerow(e.row())
    return buf.getvalue()


def _summary(values: np.ndarray):
    n = len(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return mean, se


def _right_inverse(sig: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``sigma^T (sigma sigma^T)^{-1} v`` row-wise, guarding the condition number."""
    a = np.sum(sig[..., :, None, :] * sig[..., None, :, :], axis=-1)
    cond = np.linalg.cond(a)
    if not np.all(cond <= CONDITION_LIMIT):
        raise DegenerateDiffusion(f"sigma sigma^T condition number {np.max(cond):.3g} > 1e8")
    y = np.linalg.solve(a, v[..., None])[..., 0]
    return np.sum(sig * y[..., :, None], axis=-2)


def bel_weights(model: ModelSpec, x, h, t: float, params: SimParams, streams):
    """Final states and Bismut-Elworthy-Li weights for one batch of streams.

    The weight is ``(1 / (eps t)) int_0^t <sigma^T (sigma sigma^T)^{-1} eta_s, dW_s>``.
    """
    _check_model(model)
    eps = params.epsilon
    if not eps > 0:
        raise DegenerateDiffusion("the weight needs epsilon > 0")
    dt = params.dt
    n = int(round(t / dt))
    p = len(streams)
    x = np.array(np.broadcast_to(as_state(x, model.m), (p, model.m)), dtype=float)
    eta = np.array(np.broadcast_to(as_state(h, model.m), (p, model.m)), dtype=float)
    weight = np.zeros(p)
    sources = [BrownianSource(s, model.k, dt) for s in streams]
    constant = bool(model.params.get("constant_diffusion", False))
    fixed = None
    if constant:
        sig0 = np.asarray(model.diffusion(x[:1]))[0]
        fixed = _right_inverse(sig0, np.eye(model.m))  # (k, m): column i maps e_i
    done = 0
    while done < n:
        c = min(1024, n - done)
        dW = np.stack([s.take(c) for s in sources], axis=1)
        for i in range(c):
            sig = np.asarray(model.diffusion(x))
            if constant:
                u = np.sum(fixed * eta[:, None, :], axis=-1)
            else:
                u = _right_inverse(sig, eta)
            weight += np.sum(u * dW[i], axis=-1)
            d_eta = _matvec(drift_jacobian(model, x, eps), eta) * dt
            if not constant:
                d_eta = d_eta + eps * _dsigma_dw(diffusion_jacobian(model, x), eta, dW[i])
            x = x + model.effective_drift(x, eps) * dt + eps * np.sum(sig * dW[i][:, None, :],
                                                                     axis=-1)
            eta = eta + d_eta
        done += c
    return x, weight / (eps * t)


def _job(model, x, t, params, n_paths, master_seed, batch_size):
    run = params.with_(t_final=max(t, params.dt))
    return EnsembleJob(model, x, run, n_paths, master_seed, batch_size=batch_size)


def bel_gradient(model: ModelSpec, phi: Callable, t: float, x, h, n_paths: int,
                 params: SimParams, master_seed: int, threads: Optional[int] = None,
                 batch_size: int = GRADIENT_BATCH) -> GradientEstimate:
    """Estimate ``D_x E phi(X_t) h`` via the Bismut-Elworthy-Li identity."""
    if not t > 0:
        raise ValueError("t must be positive")
    job = _job(model, x, t, params, n_paths, master_seed, batch_size)

    def batch_fn(indices):
        streams = [derive_stream(master_seed, int(i)) for i in indices]
        xt, w = bel_weights(model, x, h, t, params, streams)
        return np.asarray(phi(xt), dtype=float) * w

    values = np.concatenate(map_batches(job, batch_fn, threads))
    est, se = _summary(values)
    return GradientEstimate(est, se, n_paths, params.dt, "bel")


def terminal_states(model: ModelSpec, x, t: float, params: SimParams, streams):
    n = int(round(t / params.dt))
    run = params.with_(t_final=n * params.dt, save_every=n, burn_in=0.0)
    res = simulate_batch(model, x, run, streams)
    return res.states[-1]


def fd_gradient(model: ModelSpec, phi: Callable, t: float, x, h, delta: float, n_paths: int,
                params: SimParams, master_seed: int, threads: Optional[int] = None,
                batch_size: int = GRADIENT_BATCH) -> GradientEstimate:
    """Central difference ``(E phi(X^{x + d h}) - E phi(X^{x - d h})) / (2 d)`` on
    paired streams."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    x = as_state(x, model.m)
    h = as_state(h, model.m)
    job = _job(model, x, t, params, n_paths, master_seed, batch_size)

    def batch_fn(indices):
        streams = [derive_stream(master_seed, int(i)) for i in indices]
        up = phi(terminal_states(model, x + delta * h, t, params, streams))
        down = phi(terminal_states(model, x - delta * h, t, params, streams))
        return (np.asarray(up, dtype=float) - np.asarray(down, dtype=float)) / (2.0 * delta)

    values = np.concatenate(map_batches(job, batch_fn, threads))
    est, se = _summary(values)
    return GradientEstimate(est, se, n_paths, params.dt, "fd")
