"""Occupation measures, weak-distance diagnostics, tightness and support mass.

An :class:`EmpiricalMeasure` keeps integer histogram counts on a rectangular
grid plus a reservoir of raw visited states.  Reservoir membership is decided
by a hash of ``(path_index, step)``: the reservoir is the ``capacity`` samples
with the smallest keys.  Merging is therefore associative and commutative and
pooled results do not depend on how paths were split across jobs or threads.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

from .core import ModelSpec, as_state
from .dynamics import CandidateSet
from .errors import DimensionMismatch
from .integrate import (DelayModel, EnsembleJob, SegmentState, SimParams, flow, map_batches,
                        sfde_batch, simulate_batch)
from .noise import derive_stream

DEFAULT_BINS = 128
MAX_CELLS = 1 << 22
DEFAULT_RESERVOIR = 4096
LEAK_WARNING = 0.05

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def splitmix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def sample_keys(path_index, step) -> np.ndarray:
    """Reservoir priority of the state of ``path_index`` after ``step`` steps."""
    p = np.asarray(path_index, dtype=np.uint64)
    s = np.asarray(step, dtype=np.uint64)
    return splitmix64((p << np.uint64(32)) | (s & np.uint64(0xFFFFFFFF)))


# ---------------------------------------------------------------- grid

@dataclass(frozen=True)
class Grid:
    lo: tuple
    hi: tuple
    bins: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        bins = tuple(int(v) for v in np.atleast_1d(self.bins))
        if not (len(lo) == len(hi) == len(bins)):
            raise DimensionMismatch("lo, hi and bins must have equal length")
        if any(b <= a for a, b in zip(lo, hi)) or any(n < 1 for n in bins):
            raise ValueError("grid needs hi > lo and at least one bin per dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "bins", bins)

    @property
    def m(self) -> int:
        return len(self.bins)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.bins))

    @property
    def widths(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / np.array(self.bins)

    def cell_index(self, x: np.ndarray):
        """Flat cell index per row and a mask of rows inside the box."""
        lo, hi, n = np.array(self.lo), np.array(self.hi), np.array(self.bins)
        rel = (x - lo) / (hi - lo)
        idx = np.floor(rel * n).astype(np.int64)
        idx = np.where(x == hi, n - 1, idx)  # closed upper face
        inside = np.all((idx >= 0) & (idx < n), axis=-1)
        # row-major flattening by hand: ravel_multi_index caps the dimension at 32
        strides = np.cumprod((self.bins[1:] + (1,))[::-1])[::-1].astype(np.int64)
        flat = np.sum(idx[inside] * strides, axis=-1)
        return flat, inside

    def centers(self) -> np.ndarray:
        axes = [np.array(self.lo)[i] + (np.arange(b) + 0.5) * self.widths[i]
                for i, b in enumerate(self.bins)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.m)


def default_bins(m: int) -> int:
    """128 per dimension unless the dense grid would exceed ~4M cells."""
    return max(1, min(DEFAULT_BINS, int(math.floor(MAX_CELLS ** (1.0 / m) + 1e-9))))


def infer_grid(model, x0, params: SimParams, bins=None, min_half_width: float = 1.0) -> Grid:
    """Box around a pilot deterministic run, inflated by 50% (half-widths at
    least ``min_half_width`` so equilibrium starts still get a usable box)."""
    if isinstance(model, DelayModel):
        pts = _pilot_delay(model, x0, params)
    else:
        n = min(params.n_steps, 100_000)
        pilot = flow(model, x0, SimParams(dt=params.dt, t_final=n * params.dt))
        pts = pilot.states.reshape(-1, model.m)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    c, half = 0.5 * (lo + hi), np.maximum(0.75 * (hi - lo), min_half_width)
    m = pts.shape[1]
    bins = default_bins(m) if bins is None else bins
    return Grid(tuple(c - half), tuple(c + half), tuple(np.broadcast_to(bins, (m,))))


def _first_start(model, x0):
    if isinstance(model, DelayModel):
        return x0
    return as_state(x0, model.m).reshape(-1, model.m)[0]


def _pilot_delay(model: DelayModel, phi0: SegmentState, params: SimParams):
    n = min(params.n_steps, 100_000)
    run = params.with_(t_final=n * params.dt, epsilon=0.0, burn_in=0.0)
    return sfde_batch(model, phi0, run, [derive_stream(0, 0)])[0].states


# ---------------------------------------------------------------- measure

@dataclass
class EmpiricalMeasure:
    grid: Grid
    counts: np.ndarray
    leak_count: int
    total_samples: int
    reservoir: np.ndarray
    reservoir_keys: np.ndarray
    capacity: int = DEFAULT_RESERVOIR
    aux: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def masses(self) -> np.ndarray:
        return self.counts / self.total_samples

    @property
    def leak_mass(self) -> float:
        return self.leak_count / self.total_samples

    def samples(self) -> np.ndarray:
        return self.reservoir

    @classmethod
    def empty(cls, grid: Grid, capacity: int = DEFAULT_RESERVOIR) -> "EmpiricalMeasure":
        return cls(grid, np.zeros(grid.n_cells, dtype=np.int64), 0, 0,
                   np.empty((0, grid.m)), np.empty(0, dtype=np.uint64), capacity)

    @classmethod
    def from_samples(cls, samples, grid: Optional[Grid] = None, capacity: Optional[int] = None,
                     bins=None) -> "EmpiricalMeasure":
        """Measure of a finite sample (every row weighted equally)."""
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if grid is None:
            lo, hi = x.min(axis=0), x.max(axis=0)
            c, half = 0.5 * (lo + hi), np.maximum(0.5 * (hi - lo) * 1.01, 0.5)
            bins = default_bins(x.shape[1]) if bins is None else bins
            grid = Grid(tuple(c - half), tuple(c + half), tuple(np.broadcast_to(bins, x.shape[1:])))
        capacity = max(len(x), 1) if capacity is None else capacity
        acc = cls.empty(grid, capacity)
        acc.add(x, sample_keys(0, np.arange(len(x))))
        return acc

    def add(self, x: np.ndarray, keys: np.ndarray):
        """Fold rows ``x`` with reservoir priorities ``keys`` into the measure."""
        if x.shape[-1] != self.m:
            raise DimensionMismatch("sample dimension differs from the grid")
        flat, inside = self.grid.cell_index(x)
        self.counts += np.bincount(flat, minlength=self.grid.n_cells)
        self.leak_count += int(x.shape[0] - np.count_nonzero(inside))
        self.total_samples += int(x.shape[0])
        if self.capacity:
            if len(self.reservoir_keys) >= self.capacity:
                sel = keys < self.reservoir_keys[-1]
                x, keys = x[sel], keys[sel]
            self._keep(np.concatenate([self.reservoir, x]),
                       np.concatenate([self.reservoir_keys, keys]))

    def _keep(self, x, keys):
        if len(keys) > self.capacity:
            part = np.argpartition(keys, self.capacity - 1)[: self.capacity]
            x, keys = x[part], keys[part]
        order = np.lexsort(tuple(x.T[::-1]) + (keys,))
        self.reservoir, self.reservoir_keys = x[order], keys[order]

    def merge(self, other: "EmpiricalMeasure") -> "EmpiricalMeasure":
        if self.grid != other.grid:
            raise DimensionMismatch("measures live on different grids")
        out = EmpiricalMeasure(self.grid, self.counts + other.counts,
                               self.leak_count + other.leak_count,
                               self.total_samples + other.total_samples,
                               self.reservoir, self.reservoir_keys,
                               min(self.capacity, other.capacity), _merge_aux(self.aux, other.aux))
        out._keep(np.concatenate([self.reservoir, other.reservoir]),
                  np.concatenate([self.reservoir_keys, other.reservoir_keys]))
        return out

    def outside_mass(self, R: float) -> float:
        """Fraction of reservoir samples with ``|x| > R``."""
        if not len(self.reservoir):
            return 0.0
        return float(np.mean(np.linalg.norm(self.reservoir, axis=1) > R))

    def to_csv(self) -> str:
        """One row per bin: ``bin_i``, ``center_i``, ``mass``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        m = self.m
        w.writerow([f"bin_{i}" for i in range(m)] + [f"center_{i}" for i in range(m)] + ["mass"])
        idx = np.indices(self.grid.bins).reshape(m, -1).T
        for i, c, mass in zip(idx, self.grid.centers(), self.masses):
            w.writerow([int(v) for v in i] + [repr(float(v)) for v in c] + [repr(float(mass))])
        return buf.getvalue()


def _merge_aux(a: dict, b: dict) -> dict:
    out = dict(a)
    for key, val in b.items():
        out[key] = max(out[key], val) if key in out else val
    return out


class OccupationObserver:
    """Streams states of one batch into an :class:`EmpiricalMeasure`."""

    def __init__(self, grid: Grid, capacity: int, path_indices, burn_steps: int):
        self.measure = EmpiricalMeasure.empty(grid, capacity)
        self.paths = np.asarray(path_indices, dtype=np.uint64)
        self.burn = burn_steps
        self.norm_max = 0.0

    def update(self, first: int, states: np.ndarray):
        skip = max(0, self.burn - first)
        if skip >= states.shape[0]:
            return
        states = states[skip:]
        steps = np.arange(first + skip, first + skip + states.shape[0], dtype=np.uint64)
        keys = sample_keys(self.paths[None, :], steps[:, None]).reshape(-1)
        flat = states.reshape(-1, states.shape[-1])
        self.measure.add(flat, keys)
        self.norm_max = max(self.norm_max, float(np.max(np.linalg.norm(flat, axis=1))))


def occupation_estimate(model, x0, params: SimParams, master_seed: int, n_paths: int, *,
                        grid: Optional[Grid] = None, reservoir_size: int = DEFAULT_RESERVOIR,
                        threads: Optional[int] = None, first_index: int = 0,
                        batch_size: Optional[int] = None) -> EmpiricalMeasure:
    """Pooled occupation measure of ``X(t)``, ``t`` in ``[burn_in, t_final]``.

    ``model`` may be a :class:`DelayModel`, in which case ``x0`` is a
    :class:`SegmentState` and the measure is the marginal of ``X(t)``; the
    largest observed ``|X(t)|`` (an upper bound for the segment sup-norm) is
    kept in ``aux["norm_max"]``.
    """
    delay = isinstance(model, DelayModel)
    if grid is None:
        grid = infer_grid(model, _first_start(model, x0), params)
    if grid.m != model.m:
        raise DimensionMismatch("grid dimension differs from the model")
    job = EnsembleJob(model, x0, params, n_paths, master_seed, kind="sfde" if delay else "em",
                      first_index=first_index, **({"batch_size": batch_size} if batch_size else {}))

    def batch_fn(indices):
        obs = OccupationObserver(grid, reservoir_size, indices, params.burn_steps)
        streams = [derive_stream(master_seed, int(i)) for i in indices]
        if delay:
            sfde_batch(model, x0, params, streams, store=False, path_indices=indices,
                       observer=obs)
        else:
            simulate_batch(model, job.initial_for(indices), params, streams,
                           path_indices=indices, observer=obs, store=False)
        obs.measure.aux = {"norm_max": obs.norm_max}
        return obs.measure

    acc = EmpiricalMeasure.empty(grid, reservoir_size)
    for part in map_batches(job, batch_fn, threads):
        acc = acc.merge(part)
    if acc.leak_mass > LEAK_WARNING:
        warnings.warn(f"{acc.leak_mass:.3f} of the occupation mass fell outside the grid",
                      RuntimeWarning, stacklevel=2)
    return acc


# ---------------------------------------------------------------- weak distances

def _support(measure: EmpiricalMeasure):
    """Atoms and weights used for transport distances."""
    if len(measure.reservoir):
        x = measure.reservoir
        return x, np.full(len(x), 1.0 / len(x))
    nz = np.nonzero(measure.counts)[0]
    return measure.grid.centers()[nz], measure.counts[nz] / measure.counts[nz].sum()


def w1_weighted(xa, wa, xb, wb) -> float:
    """Exact W1 between two weighted point sets on the line."""
    xa, wa, xb, wb = map(np.asarray, (xa, wa, xb, wb))
    ia, ib = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    xa, wa, xb, wb = xa[ia], wa[ia], xb[ib], wb[ib]
    ca, cb = np.cumsum(wa) / wa.sum(), np.cumsum(wb) / wb.sum()
    z = np.sort(np.concatenate([xa, xb]))
    fa = np.concatenate([[0.0], ca])[np.searchsorted(xa, z[:-1], side="right")]
    fb = np.concatenate([[0.0], cb])[np.searchsorted(xb, z[:-1], side="right")]
    return float(np.sum(np.abs(fa - fb) * np.diff(z)))


def w1_distance_1d(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    if a.m != 1 or b.m != 1:
        raise DimensionMismatch("w1_distance_1d needs one-dimensional measures")
    xa, wa = _support(a)
    xb, wb = _support(b)
    return w1_weighted(xa[:, 0], wa, xb[:, 0], wb)


def w1_to_cdf(measure: EmpiricalMeasure, cdf, n_grid: int = 200_001) -> float:
    """W1 between a 1-d measure and a distribution given by its CDF.

    Integrates ``|F_n - F|`` on a fine grid that also contains every atom.
    """
    if measure.m != 1:
        raise DimensionMismatch("w1_to_cdf needs a one-dimensional measure")
    x, w = _support(measure)
    x = x[:, 0]
    order = np.argsort(x, kind="stable")
    x, c = x[order], np.cumsum(w[order])
    span = max(x[-1] - x[0], 1e-12)
    z = np.union1d(np.linspace(x[0] - span, x[-1] + span, n_grid), x)
    fn = np.concatenate([[0.0], c])[np.searchsorted(x, z, side="right")]
    # F_n is constant between grid nodes, so integrate left endpoints of F_n
    # against the trapezoid of F
    inner = np.abs(fn[:-1] - 0.5 * (cdf(z[:-1]) + cdf(z[1:])))
    tails = _tail_mass(cdf, z[0], z[-1])
    return float(np.sum(inner * np.diff(z)) + tails)


def _tail_mass(cdf, lo, hi, width=50.0, n=20_001):
    left = np.linspace(lo - width, lo, n)
    right = np.linspace(hi, hi + width, n)
    return float(trapezoid(cdf(left), left) + trapezoid(1.0 - cdf(right), right))


def sliced_directions(m: int, n_directions: int, seed: int) -> np.ndarray:
    """Fixed low-discrepancy unit directions (half circle in 2-d)."""
    if m == 2:
        u = np.random.default_rng(seed).random()
        theta = np.pi * (np.arange(n_directions) + u) / n_directions
        return np.stack([np.cos(theta), np.sin(theta)], axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pts = qmc.Sobol(m, scramble=True, seed=seed).random(n_directions)
    z = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sliced_w1(a: EmpiricalMeasure, b: EmpiricalMeasure, n_directions: int = 64,
              seed: int = 0, directions=None) -> float:
    """Average 1-d W1 of the projections onto fixed directions."""
    if a.m != b.m:
        raise DimensionMismatch("measures must share a dimension")
    if a.m < 2:
        raise DimensionMismatch("sliced_w1 needs dimension >= 2; use w1_distance_1d")
    if directions is None:
        directions = sliced_directions(a.m, n_directions, seed)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    xa, wa = _support(a)
    xb, wb = _support(b)
    dists = [w1_weighted(xa @ d, wa, xb @ d, wb) for d in directions]
    return float(np.mean(dists))


def weak_distance(a: EmpiricalMeasure, b: EmpiricalMeasure, n_directions=64, seed=0) -> float:
    if a.m == 1:
        return w1_distance_1d(a, b)
    return sliced_w1(a, b, n_directions, seed)


# ---------------------------------------------------------------- tightness and support

@dataclass
class TightnessTable:
    rows: list  # (epsilon, R, outside mass)
    sup_by_R: dict
    tolerance: float
    passed: bool


def tightness_scan(measures, radii, tolerance: float = 0.01) -> TightnessTable:
    measures = list(measures)
    dims = {mu.m for _, mu in measures}
    if len(dims) > 1:
        raise DimensionMismatch("all measures must share a dimension")
    radii = sorted(float(r) for r in radii)
    rows, sup = [], {}
    for R in radii:
        vals = []
        for eps, mu in measures:
            v = mu.outside_mass(R)
            rows.append((float(eps), R, v))
            vals.append(v)
        sup[R] = max(vals)
    seq = [sup[R] for R in radii]
    passed = all(b <= a for a, b in zip(seq, seq[1:])) and seq[-1] < tolerance
    return TightnessTable(rows, sup, tolerance, bool(passed))


def _nearest_owner(measure, candidates: CandidateSet, delta, scale):
    if not delta > 0:
        raise ValueError("delta must be positive")
    pts, owner = candidates.anchors()
    pts, x = scale * pts, scale * measure.reservoir
    if pts.shape[1] != measure.m:
        raise DimensionMismatch("candidate set dimension differs from the measure")
    if not len(x):
        return np.empty(0), np.empty(0, dtype=int)
    dist, idx = cKDTree(pts).query(x)
    return dist, owner[idx]


def support_mass(measure: EmpiricalMeasure, candidates: CandidateSet, delta: float,
                 scale: float = 1.0) -> float:
    """Fraction of reservoir samples within ``delta`` of the candidate set.

    Distances are Euclidean after multiplying coordinates by ``scale`` (use
    ``sqrt(h)`` for the discrete L2 norm of a grid function).
    """
    dist, _ = _nearest_owner(measure, candidates, delta, scale)
    return float(np.mean(dist < delta)) if len(dist) else 0.0


def support_shares(measure: EmpiricalMeasure, candidates: CandidateSet, delta: float,
                   scale: float = 1.0) -> dict:
    """Per-element mass: samples within ``delta``, credited to the nearest element."""
    dist, owner = _nearest_owner(measure, candidates, delta, scale)
    n = max(len(dist), 1)
    near = dist < delta
    return {lab: float(np.count_nonzero(near & (owner == i)) / n)
            for i, lab in enumerate(candidates.labels)}


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepRecord:
    epsilon: float
    measure: EmpiricalMeasure
    support_mass: float
    shares: dict
    w1_to_previous: float
    leak_mass: float


@dataclass
class SweepReport:
    epsilons: list
    records: list
    distances: np.ndarray
    tightness: TightnessTable
    support_trend_ok: bool
    cauchy_trend_ok: bool
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if len(self.records) != len(self.epsilons):
            raise ValueError("one record per epsilon")

    def to_summary_csv(self) -> str:
        radii = sorted({R for _, R, _ in self.tightness.rows})
        out = {(e, R): v for e, R, v in self.tightness.rows}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "w1_to_previous", "support_mass", "leak_mass"]
                   + [f"outside_mass_R{R:g}" for R in radii])
        for r in self.records:
            w.writerow([repr(r.epsilon), repr(r.w1_to_previous), repr(r.support_mass),
                        repr(r.leak_mass)] + [repr(out[(r.epsilon, R)]) for R in radii])
        return buf.getvalue()


def convergence_sweep(model, x0, epsilons, params: SimParams, candidates: CandidateSet,
                      master_seed: int, *, n_paths: int = 8, delta: float = 0.1,
                      radii=(1.0, 2.0, 4.0), grid: Optional[Grid] = None,
                      reservoir_size: int = DEFAULT_RESERVOIR, threads=None,
                      slack: float = 0.03, tightness_tol: float = 0.01,
                      n_directions: int = 64) -> SweepReport:
    """Occupation measures along a decreasing epsilon sequence.

    Every level reuses ``master_seed`` (common random numbers).  The support
    trend flag allows a drop of ``slack`` between consecutive levels; the
    Cauchy flag asks consecutive weak distances not to grow by more than
    ``slack``.
    """
    epsilons = [float(e) for e in epsilons]
    if len(epsilons) < 2 or any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilons must be strictly decreasing with at least two entries")
    if grid is None:
        grid = infer_grid(model, _first_start(model, x0), params)
    measures = [occupation_estimate(model, x0, params.with_(epsilon=e), master_seed, n_paths,
                                    grid=grid, reservoir_size=reservoir_size, threads=threads)
                for e in epsilons]
    k = len(measures)
    dist = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            dist[i, j] = dist[j, i] = weak_distance(measures[i], measures[j], n_directions,
                                                    master_seed)
    records = []
    for i, (e, mu) in enumerate(zip(epsilons, measures)):
        records.append(SweepRecord(e, mu, support_mass(mu, candidates, delta),
                                   support_shares(mu, candidates, delta),
                                   float(dist[i, i - 1]) if i else float("nan"), mu.leak_mass))
    masses = [r.support_mass for r in records]
    support_ok = all(b >= a - slack for a, b in zip(masses, masses[1:]))
    steps = [dist[i, i - 1] for i in range(1, k)]
    cauchy_ok = all(b <= a + slack for a, b in zip(steps, steps[1:]))
    tight = tightness_scan(list(zip(epsilons, measures)), radii, tightness_tol)
    meta = {"model": getattr(model, "label", ""), "master_seed": master_seed,
            "n_paths": n_paths, "delta": delta, "dt": params.dt, "t_final": params.t_final,
            "burn_in": params.burn_in, "grid": grid}
    return SweepReport(epsilons, records, dist, tight, support_ok, cauchy_ok, meta)
