"""Fixed-step integrators and the deterministic ensemble runner.

All steppers operate on a batch of paths at once (states of shape
``(n_paths, m)``); each path still draws its own noise from its own
:class:`~zeronoise.noise.RngStream`, so a path's trajectory does not depend
on which other paths share its batch.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .core import ITO, ModelSpec, NoiseRecord, PathSample, as_state
from .errors import (BlowUp, DimensionMismatch, DtDoesNotDivideTau, PathError,
                     StratonovichNotConverted)
from .noise import BrownianSource, RngStream, derive_stream, jump_event_arrays

CHUNK = 1024
DEFAULT_BATCH = 256


@dataclass(frozen=True)
class SimParams:
    dt: float
    t_final: float
    burn_in: float = 0.0
    epsilon: float = 0.0
    record_noise: bool = False
    save_every: int = 1
    blowup: float = 1e8

    def __post_init__(self):
        if not (self.dt > 0 and self.dt <= self.t_final):
            raise ValueError("require 0 < dt <= t_final")
        if not (0 <= self.burn_in < self.t_final):
            raise ValueError("require 0 <= burn_in < t_final")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def burn_steps(self) -> int:
        return int(math.ceil(self.burn_in / self.dt - 1e-9))

    def with_(self, **changes) -> "SimParams":
        vals = {f: getattr(self, f) for f in self.__dataclass_fields__}
        vals.update(changes)
        return SimParams(**vals)


def _saved_indices(n_steps: int, save_every: int) -> np.ndarray:
    idx = np.arange(0, n_steps + 1, save_every)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


def _check_blowup(x, bound, step, dt, path_indices):
    """``x`` holds the chunk ending at grid index ``step``: ``(c, m)`` or ``(c, n_paths, m)``."""
    norms = np.max(np.abs(x), axis=-1)
    bad = ~(norms <= bound)
    if np.any(bad):
        first = np.argwhere(bad)[0]
        t = (step - x.shape[0] + 1 + int(first[0])) * dt
        pi = None
        if path_indices is not None and len(first) > 1:
            pi = int(path_indices[int(first[1])])
        raise BlowUp(f"state norm exceeded {bound:g} at t={t:.6g}"
                     + (f" on path {pi}" if pi is not None else ""),
                     time=t, path_index=pi)


class _Recorder:
    """Collects states at a fixed stride from chunked updates."""

    def __init__(self, n_steps, save_every, x0):
        self.idx = _saved_indices(n_steps, save_every)
        self.states = np.empty((self.idx.size,) + x0.shape)
        self.states[0] = x0
        self._pos = 1

    def update(self, first, chunk):
        last = first + chunk.shape[0]
        while self._pos < self.idx.size and self.idx[self._pos] < last:
            self.states[self._pos] = chunk[self.idx[self._pos] - first]
            self._pos += 1


# ---------------------------------------------------------------- deterministic

def _rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def flow(model: ModelSpec, x0, params: SimParams) -> PathSample:
    """Classical RK4 trajectory of ``x' = b(x)``; ``x0`` may carry batch axes.

    The epsilon field of ``params`` is ignored.
    """
    x = as_state(x0, model.m).copy()
    n = params.n_steps
    rec = _Recorder(n, params.save_every, x)
    buf = np.empty((min(CHUNK, n),) + x.shape)
    step = 0
    while step < n:
        c = min(CHUNK, n - step)
        for i in range(c):
            x = _rk4_step(model.drift, x, params.dt)
            buf[i] = x
        _check_blowup(buf[:c], params.blowup, step + c, params.dt, None)
        rec.update(step + 1, buf[:c])
        step += c
    return PathSample(rec.idx * params.dt, rec.states)


# ---------------------------------------------------------------- stochastic

def _jump_schedule(model, streams, params, n_steps):
    """Map step index -> (rows, atoms) of events applied during that step."""
    if model.jumps is None or len(model.jumps) == 0:
        return {}, [[] for _ in streams]
    steps_all, rows_all, atoms_all = [], [], []
    per_path = []
    for row, stream in enumerate(streams):
        times, atoms = jump_event_arrays(stream, model.jumps, n_steps * params.dt)
        # first grid time >= event time; the step ending there starts one earlier
        steps = np.maximum(np.ceil(times / params.dt - 1e-12).astype(np.int64), 1) - 1
        steps = np.minimum(steps, n_steps - 1)
        per_path.append(list(zip(steps.tolist(), atoms.tolist())))
        steps_all.append(steps)
        rows_all.append(np.full(steps.size, row, dtype=np.int64))
        atoms_all.append(atoms)
    steps = np.concatenate(steps_all)
    rows = np.concatenate(rows_all)
    atoms = np.concatenate(atoms_all)
    order = np.lexsort((atoms, rows, steps))
    steps, rows, atoms = steps[order], rows[order], atoms[order]
    schedule = {}
    if steps.size:
        bounds = np.flatnonzero(np.diff(steps)) + 1
        for s_rows, s_atoms, s in zip(np.split(rows, bounds), np.split(atoms, bounds),
                                      steps[np.r_[0, bounds]]):
            schedule[int(s)] = (s_rows, s_atoms)
    return schedule, per_path


@dataclass
class BatchResult:
    times: Optional[np.ndarray]
    states: Optional[np.ndarray]          # (n_saved, n_paths, m)
    states_zero: Optional[np.ndarray]     # epsilon = 0 companion (coupled runs)
    dW: Optional[np.ndarray]              # (n_steps, n_paths, k)
    jumps: list = field(default_factory=list)


def simulate_batch(model: ModelSpec, x0, params: SimParams, streams: Sequence[RngStream], *,
                   path_indices=None, observer=None, store=True, coupled=False) -> BatchResult:
    """Euler-Maruyama for a batch of jump-diffusion paths.

    ``x0`` has shape ``(m,)`` or ``(n_paths, m)``.  ``observer.update(first,
    states)`` receives every post-step state in chunks (and the initial state
    with ``first == 0``).
    """
    if model.noise_kind != ITO:
        raise StratonovichNotConverted("convert the model with stratonovich_to_ito first")
    n_paths = len(streams)
    x = np.array(np.broadcast_to(as_state(x0, model.m), (n_paths, model.m)), dtype=float)
    dt, eps, n = params.dt, params.epsilon, params.n_steps
    sources = [BrownianSource(s, model.k, dt) for s in streams] if model.k else []
    schedule, per_path_jumps = _jump_schedule(model, streams, params, n)
    jumps = model.jumps if (model.jumps is not None and len(model.jumps)) else None
    constant_noise = bool(model.params.get("constant_diffusion", False))

    x_zero = x.copy() if coupled else None
    rec = _Recorder(n, params.save_every, x) if store else None
    rec0 = _Recorder(n, params.save_every, x_zero) if (store and coupled) else None
    dW_all = np.empty((n, n_paths, model.k)) if params.record_noise else None
    if observer is not None:
        observer.update(0, x[None])

    buf = np.empty((min(CHUNK, n), n_paths, model.m))
    buf0 = np.empty_like(buf) if coupled else None
    step = 0
    while step < n:
        c = min(CHUNK, n - step)
        if model.k:
            dW = np.stack([src.take(c) for src in sources], axis=1)  # (c, n_paths, k)
        else:
            dW = np.zeros((c, n_paths, 0))
        if dW_all is not None:
            dW_all[step:step + c] = dW
        noise = None
        if eps != 0.0 and constant_noise and model.k:
            mat = np.asarray(model.diffusion(x[:1]))[0]
            noise = np.zeros((c, n_paths, model.m))
            for j in range(model.k):
                col = mat[:, j]
                if np.any(col):
                    noise += dW[:, :, j, None] * col
            noise *= eps
        for i in range(c):
            b = model.effective_drift(x, eps)
            x_new = x + b * dt
            if eps != 0.0 and model.k:
                if noise is not None:
                    x_new = x_new + noise[i]
                else:
                    sig = model.diffusion(x)
                    x_new = x_new + eps * (sig * dW[i][:, None, :]).sum(axis=-1)
            if jumps is not None and eps != 0.0:
                x_new = x_new - (eps * dt) * jumps.compensator(x)
                events = schedule.get(step + i)
                if events is not None:
                    rows, atoms = events
                    np.add.at(x_new, rows, eps * jumps.jump_map(x[rows], jumps.marks[atoms]))
            x = x_new
            buf[i] = x
            if coupled:
                x_zero = x_zero + model.drift(x_zero) * dt
                buf0[i] = x_zero
        _check_blowup(buf[:c], params.blowup, step + c, dt, path_indices)
        if coupled:
            _check_blowup(buf0[:c], params.blowup, step + c, dt, path_indices)
        if rec is not None:
            rec.update(step + 1, buf[:c])
        if rec0 is not None:
            rec0.update(step + 1, buf0[:c])
        if observer is not None:
            observer.update(step + 1, buf[:c])
        step += c

    times = rec.idx * dt if rec is not None else None
    return BatchResult(times=times,
                       states=rec.states if rec is not None else None,
                       states_zero=rec0.states if rec0 is not None else None,
                       dW=dW_all, jumps=per_path_jumps)


def _path_from_batch(res: BatchResult, row: int, zero=False) -> PathSample:
    states = res.states_zero if zero else res.states
    record = None
    if res.dW is not None:
        record = NoiseRecord(dW=res.dW[:, row, :].copy(), jumps=list(res.jumps[row]))
    return PathSample(res.times, states[:, row, :].copy(), record)


def em_path(model: ModelSpec, x0, params: SimParams, stream: RngStream) -> PathSample:
    """One Euler-Maruyama path of the compensated jump-diffusion."""
    res = simulate_batch(model, x0, params, [stream])
    return _path_from_batch(res, 0)


def coupled_pair(model: ModelSpec, x0, params: SimParams, stream: RngStream):
    """``(X^eps, X^0)`` on the same step schedule; ``X^0`` uses no noise."""
    res = simulate_batch(model, x0, params, [stream], coupled=True)
    return _path_from_batch(res, 0), PathSample(res.times, res.states_zero[:, 0, :].copy())


def euler_maruyama(model: ModelSpec, x0, params: SimParams, dW: np.ndarray) -> PathSample:
    """Euler-Maruyama on given Brownian increments (Ito model, no jumps).

    ``dW`` has shape ``(n_steps, k)`` or ``(n_steps, n_paths, k)``; useful for
    strong-convergence studies where coarse increments are sums of fine ones.
    """
    if model.noise_kind != ITO:
        raise StratonovichNotConverted("convert the model with stratonovich_to_ito first")
    x = as_state(x0, model.m).copy()
    if dW.ndim == 3:
        x = np.array(np.broadcast_to(x, (dW.shape[1], model.m)))
    eps, dt = params.epsilon, params.dt
    n = params.n_steps
    rec = _Recorder(n, params.save_every, x)
    buf = np.empty((min(CHUNK, n),) + x.shape)
    step = 0
    while step < n:
        c = min(CHUNK, n - step)
        for i in range(c):
            w = dW[step + i]
            x = (x + model.effective_drift(x, eps) * dt
                 + eps * (model.diffusion(x) * w[..., None, :]).sum(axis=-1))
            buf[i] = x
        _check_blowup(buf[:c], params.blowup, step + c, dt, None)
        rec.update(step + 1, buf[:c])
        step += c
    return PathSample(rec.idx * dt, rec.states)


def stratonovich_heun(model: ModelSpec, x0, params: SimParams, dW: np.ndarray) -> PathSample:
    """Stochastic Heun scheme for a Stratonovich diffusion on given increments.

    ``dW`` has shape ``(n_steps, k)`` or ``(n_steps, n_paths, k)``.  No jumps.
    """
    x = as_state(x0, model.m).copy()
    eps, dt = params.epsilon, params.dt
    n = params.n_steps
    rec = _Recorder(n, params.save_every, x)
    buf = np.empty((min(CHUNK, n),) + x.shape)
    step = 0
    while step < n:
        c = min(CHUNK, n - step)
        for i in range(c):
            w = dW[step + i]
            b0 = model.drift(x)
            g0 = eps * (model.diffusion(x) * w[..., None, :]).sum(axis=-1)
            pred = x + b0 * dt + g0
            b1 = model.drift(pred)
            g1 = eps * (model.diffusion(pred) * w[..., None, :]).sum(axis=-1)
            x = x + 0.5 * (b0 + b1) * dt + 0.5 * (g0 + g1)
            buf[i] = x
        _check_blowup(buf[:c], params.blowup, step + c, dt, None)
        rec.update(step + 1, buf[:c])
        step += c
    return PathSample(rec.idx * dt, rec.states)


# ---------------------------------------------------------------- delay equations

@dataclass(frozen=True)
class DelayModel:
    """``dX = [-B X(t) + A g(X(t - tau))] dt + eps sigma(X(t)) dW``."""

    B: np.ndarray
    A: np.ndarray
    g: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    tau: float
    k: int
    label: str = "delay"
    params: dict = field(default_factory=dict, compare=False)

    @property
    def m(self) -> int:
        return np.asarray(self.B).shape[0]

    def drift(self, x_now, x_delayed):
        # elementwise products keep every row independent of the batch layout
        B = np.asarray(self.B, dtype=float)
        A = np.asarray(self.A, dtype=float)
        return (-np.sum(x_now[..., None, :] * B, axis=-1)
                + np.sum(self.g(x_delayed)[..., None, :] * A, axis=-1))


def _delay_steps(tau, dt):
    ratio = tau / dt
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise DtDoesNotDivideTau(f"dt={dt} does not divide tau={tau}")
    return n


@dataclass
class SegmentState:
    """Ring buffer holding the segment ``X(t + theta)``, theta in [-tau, 0].

    ``ring[j % (n_delay + 1)]`` holds the state at grid index ``j``; ``head``
    is the grid index of the current time.
    """

    tau: float
    dt: float
    ring: np.ndarray
    head: int = 0

    def __post_init__(self):
        n = _delay_steps(self.tau, self.dt)
        self.ring = np.asarray(self.ring, dtype=float)
        if self.ring.shape[0] != n + 1:
            raise DimensionMismatch(f"ring must hold {n + 1} states")

    @property
    def n_delay(self) -> int:
        return self.ring.shape[0] - 1

    @classmethod
    def constant(cls, phi, tau, dt):
        phi = np.asarray(phi, dtype=float)
        n = _delay_steps(tau, dt)
        return cls(tau, dt, np.broadcast_to(phi, (n + 1,) + phi.shape).copy())

    @classmethod
    def from_samples(cls, theta, values, tau, dt):
        """Piecewise-linear interpolation of tabulated ``phi(theta)`` onto the grid."""
        theta = np.asarray(theta, dtype=float)
        values = np.asarray(values, dtype=float)
        n = _delay_steps(tau, dt)
        grid = -dt * np.arange(n, -1, -1)  # -tau ... 0
        cols = [np.interp(grid, theta, values[:, i]) for i in range(values.shape[1])]
        table = np.stack(cols, axis=-1)  # table[j] is theta = (j - n) dt
        ring = np.empty_like(table)
        for j in range(n + 1):
            ring[(j - n) % (n + 1)] = table[j]
        return cls(tau, dt, ring)

    def current(self):
        return self.ring[self.head % (self.n_delay + 1)]

    def delayed(self):
        return self.ring[(self.head - self.n_delay) % (self.n_delay + 1)]

    def push(self, x):
        self.head += 1
        self.ring[self.head % (self.n_delay + 1)] = x

    def sup_norm(self):
        return np.max(np.linalg.norm(self.ring, axis=-1), axis=0)


def sfde_path(model: DelayModel, phi0: SegmentState, params: SimParams,
              stream: RngStream) -> PathSample:
    """Euler-Maruyama for the delay equation; returns ``X(t)`` at saved times."""
    return sfde_batch(model, phi0, params, [stream], store=True)[0]


def sfde_batch(model: DelayModel, phi0: SegmentState, params: SimParams, streams, *,
               store=True, path_indices=None, observer=None):
    if abs(phi0.dt - params.dt) > 1e-15:
        raise DtDoesNotDivideTau("segment grid must use the simulation step")
    _delay_steps(model.tau, params.dt)
    if abs(phi0.tau - model.tau) > 1e-12:
        raise DimensionMismatch("segment length differs from the model delay")
    n_paths = len(streams)
    ring = phi0.ring
    if ring.ndim == 2:
        ring = np.broadcast_to(ring[:, None, :], (ring.shape[0], n_paths, ring.shape[1]))
    seg = SegmentState(phi0.tau, phi0.dt, np.array(ring), head=phi0.head)
    dt, eps, n = params.dt, params.epsilon, params.n_steps
    sources = [BrownianSource(s, model.k, dt) for s in streams]
    x = seg.current().copy()
    rec = _Recorder(n, params.save_every, x) if store else None
    if observer is not None:
        observer.update(0, x[None])
    buf = np.empty((min(CHUNK, n), n_paths, model.m))
    step = 0
    while step < n:
        c = min(CHUNK, n - step)
        dW = np.stack([src.take(c) for src in sources], axis=1)
        for i in range(c):
            x_new = x + model.drift(x, seg.delayed()) * dt
            if eps != 0.0:
                x_new = x_new + eps * (model.sigma(x) * dW[i][:, None, :]).sum(axis=-1)
            x = x_new
            seg.push(x)
            buf[i] = x
        _check_blowup(buf[:c], params.blowup, step + c, dt, path_indices)
        if rec is not None:
            rec.update(step + 1, buf[:c])
        if observer is not None:
            observer.update(step + 1, buf[:c])
        step += c
    if rec is None:
        return []
    times = rec.idx * dt
    return [PathSample(times, rec.states[:, r, :].copy()) for r in range(n_paths)]


def segment_sup_norms(path: PathSample, tau: float) -> np.ndarray:
    """Running ``max_{s in [t - tau, t]} |X(s)|`` evaluated at the saved times."""
    from scipy.ndimage import maximum_filter1d

    norms = np.linalg.norm(path.states, axis=-1)
    dt_saved = path.times[1] - path.times[0]
    width = int(round(tau / dt_saved)) + 1
    # origin shifts the window to cover [i - width + 1, i]
    return maximum_filter1d(norms, size=width, origin=(width - 1) // 2, mode="nearest")


# ---------------------------------------------------------------- ensembles

class Reducer:
    """Associative fold: ``combine(acc, map(index, path))`` in index order."""

    def initial(self):
        return None

    def map(self, index: int, path: PathSample):
        raise NotImplementedError

    def combine(self, acc, part):
        raise NotImplementedError


class FunctionReducer(Reducer):
    def __init__(self, map_fn, combine_fn, initial=None):
        self._map, self._combine, self._init = map_fn, combine_fn, initial

    def initial(self):
        return self._init

    def map(self, index, path):
        return self._map(index, path)

    def combine(self, acc, part):
        return self._combine(acc, part)


class MomentReducer(Reducer):
    """Running count, sum and sum of squares of a (vector) statistic."""

    def __init__(self, statistic):
        self.statistic = statistic

    def initial(self):
        return (0, 0.0, 0.0)

    def map(self, index, path):
        v = np.asarray(self.statistic(path), dtype=float)
        return (1, v, v * v)

    def combine(self, acc, part):
        return (acc[0] + part[0], acc[1] + part[1], acc[2] + part[2])

    @staticmethod
    def summary(acc):
        n, s, ss = acc
        mean = s / n
        var = np.maximum(ss / n - mean * mean, 0.0) * n / max(n - 1, 1)
        return mean, np.sqrt(var / n)


@dataclass
class EnsembleJob:
    model: Any
    initial: Any
    params: SimParams
    n_paths: int
    master_seed: int
    kind: str = "em"          # "em", "coupled" or "sfde"
    batch_size: int = DEFAULT_BATCH
    first_index: int = 0

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.kind not in ("em", "coupled", "sfde"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")

    def batches(self):
        start = self.first_index
        stop = self.first_index + self.n_paths
        # batch boundaries are aligned to multiples of batch_size so that the
        # composition of a batch never depends on how the job was split
        edges = list(range(start - start % self.batch_size + self.batch_size, stop, self.batch_size))
        bounds = [start] + edges + [stop]
        return [np.arange(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def initial_for(self, indices):
        if self.kind == "sfde":
            return self.initial
        x0 = np.asarray(self.initial, dtype=float)
        if x0.ndim == 2:
            return x0[indices - self.first_index]
        return x0


def default_threads():
    try:
        return max(1, int(os.environ.get("ZNL_THREADS", "1")))
    except ValueError:
        return 1


def _run_batch(job: EnsembleJob, indices):
    streams = [derive_stream(job.master_seed, int(i)) for i in indices]
    x0 = job.initial_for(indices)
    try:
        if job.kind == "sfde":
            return [(p, None) for p in sfde_batch(job.model, x0, job.params, streams,
                                                  path_indices=indices)]
        res = simulate_batch(job.model, x0, job.params, streams, path_indices=indices,
                             coupled=job.kind == "coupled")
    except BlowUp as exc:
        raise PathError(exc.path_index if exc.path_index is not None else int(indices[0]),
                        exc) from exc
    out = []
    for r in range(len(indices)):
        zero = _path_from_batch(res, r, zero=True) if job.kind == "coupled" else None
        out.append((_path_from_batch(res, r), zero))
    return out


def map_batches(job: EnsembleJob, batch_fn, threads=None):
    """Apply ``batch_fn(indices)`` to every batch; results in batch order."""
    threads = default_threads() if threads is None else max(1, int(threads))
    batches = job.batches()
    if threads == 1 or len(batches) == 1:
        return [batch_fn(b) for b in batches]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(batch_fn, batches))


def run_ensemble(job: EnsembleJob, reducer: Reducer, threads=None):
    """Simulate ``job.n_paths`` paths and fold them in ascending index order.

    For ``kind == "coupled"`` the reducer's ``map`` receives a
    ``(X^eps, X^0)`` tuple.  Results do not depend on ``threads``.
    """

    def batch_fn(indices):
        paths = _run_batch(job, indices)
        parts = []
        for i, (p, z) in zip(indices, paths):
            parts.append(reducer.map(int(i), (p, z) if job.kind == "coupled" else p))
        return parts

    acc = reducer.initial()
    for parts in map_batches(job, batch_fn, threads):
        for part in parts:
            acc = part if acc is None else reducer.combine(acc, part)
    return acc
