"""Deterministic limit-set analysis: equilibria, linearisation, omega-limit
sampling and Birkhoff-centre candidate sets."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ModelSpec, as_state, drift_jacobian
from .errors import EmptyCandidateSet, UnknownModel
from .integrate import DelayModel, SimParams, flow
from .models.zoo import make_params, may_leonard_case, may_leonard_equilibria, zoo_build

STABLE = "stable"
SADDLE = "saddle"
UNSTABLE_FOCUS = "unstable_focus"
UNSTABLE_NODE = "unstable_node"
CENTER_UNKNOWN = "center_unknown"

DEDUP_TOL = 1e-6
RESIDUAL_TOL = 1e-8


@dataclass
class CandidatePoint:
    x: np.ndarray
    label: str
    classification: str = CENTER_UNKNOWN
    eigenvalues: Optional[np.ndarray] = None


@dataclass
class CandidateCurve:
    """Sampled closed orbit (points in trajectory order)."""

    points: np.ndarray
    period: float
    label: str


@dataclass
class CandidateSet:
    points: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    provenance: str = ""

    def __len__(self):
        return len(self.points) + len(self.curves)

    @property
    def labels(self) -> list:
        return [p.label for p in self.points] + [c.label for c in self.curves]

    def anchors(self):
        """All sample points plus the index of the element each belongs to."""
        if not len(self):
            raise EmptyCandidateSet("candidate set is empty")
        pts, owner = [], []
        for i, p in enumerate(self.points):
            pts.append(np.atleast_2d(p.x))
            owner.append(np.full(1, i))
        for j, c in enumerate(self.curves):
            pts.append(np.asarray(c.points, dtype=float))
            owner.append(np.full(len(c.points), len(self.points) + j))
        return np.concatenate(pts), np.concatenate(owner)

    @classmethod
    def from_points(cls, points, labels=None, provenance="user") -> "CandidateSet":
        points = [np.asarray(p, dtype=float) for p in points]
        labels = labels or [f"Q{i}" for i in range(len(points))]
        return cls([CandidatePoint(p, lab) for p, lab in zip(points, labels)], [], provenance)

    def subset(self, labels) -> "CandidateSet":
        labels = set(labels)
        return CandidateSet([p for p in self.points if p.label in labels],
                            [c for c in self.curves if c.label in labels],
                            self.provenance)

    def to_csv(self) -> str:
        return equilibria_csv(self.points)


# ---------------------------------------------------------------- equilibria

class EquilibriumList(list):
    """Equilibria in lexicographic order; ``n_failed`` counts dropped seeds."""

    n_failed: int = 0


def _newton(model: ModelSpec, x, tol, max_iter):
    fx = model.drift(x)
    nf = np.linalg.norm(fx)
    for _ in range(max_iter):
        if nf < tol:
            return x
        J = drift_jacobian(model, x)
        try:
            step = np.linalg.solve(J, -fx)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -fx, rcond=None)[0]
        t = 1.0
        while t > 1e-6:
            x_try = x + t * step
            f_try = model.drift(x_try)
            n_try = np.linalg.norm(f_try)
            if np.isfinite(n_try) and n_try < nf:
                break
            t *= 0.5
        else:
            return x if nf < RESIDUAL_TOL else None
        x, fx, nf = x_try, f_try, n_try
    return x if nf < RESIDUAL_TOL else None


def find_equilibria(model: ModelSpec, seed_points, newton_tol: float = 1e-12,
                    max_iter: int = 60) -> EquilibriumList:
    """Damped Newton on ``b(x) = 0`` from every seed; roots deduplicated at 1e-6."""
    roots, failed = [], 0
    for seed in np.atleast_2d(np.asarray(seed_points, dtype=float)):
        x = _newton(model, as_state(seed, model.m), newton_tol, max_iter)
        if x is None or np.linalg.norm(model.drift(x)) >= RESIDUAL_TOL:
            failed += 1
            continue
        roots.append(x)
    out = EquilibriumList()
    if roots:
        arr = np.array(roots)
        order = np.lexsort(arr.T[::-1])
        for x in arr[order]:
            if all(np.max(np.abs(x - y)) > DEDUP_TOL for y in out):
                out.append(x)
    out.n_failed = failed
    return out


def seed_grid(lo, hi, n) -> np.ndarray:
    lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


@dataclass
class Classification:
    kind: str
    eigenvalues: np.ndarray


def classify_equilibrium(model: ModelSpec, x_star, tol: float = 1e-9) -> Classification:
    x_star = as_state(x_star, model.m)
    if np.linalg.norm(model.drift(x_star)) >= 1e-6:
        raise ValueError("x_star is not an equilibrium (|b| >= 1e-6)")
    J = drift_jacobian(model, x_star)
    eig = np.linalg.eigvals(J)
    eig = eig[np.lexsort((eig.imag, eig.real))]
    re = eig.real
    scale = tol * max(1.0, float(np.max(np.abs(eig))))
    if np.any(np.abs(re) <= scale):
        kind = CENTER_UNKNOWN
    elif np.all(re < 0):
        kind = STABLE
    elif np.all(re > 0):
        kind = UNSTABLE_FOCUS if np.any(np.abs(eig.imag) > scale) else UNSTABLE_NODE
    else:
        kind = SADDLE
    return Classification(kind, eig)


# ---------------------------------------------------------------- omega limits

@dataclass
class OmegaSample:
    kind: str  # "equilibrium", "periodic" or "other"
    samples: np.ndarray
    period: Optional[float] = None


def _returns(d, times, eps):
    """Times of local minima of ``d`` below ``eps`` after the path left the ball."""
    out = []
    left = False
    for i in range(1, len(d) - 1):
        if d[i] > 2 * eps:
            left = True
        if left and d[i] < eps and d[i] <= d[i - 1] and d[i] <= d[i + 1]:
            # parabolic refinement of the minimum
            den = d[i - 1] - 2 * d[i] + d[i + 1]
            shift = 0.5 * (d[i - 1] - d[i + 1]) / den if den > 0 else 0.0
            out.append(times[i] + shift * (times[1] - times[0]))
            left = False
    return out


def omega_limit_sample(model: ModelSpec, x0, params: SimParams,
                       cluster_eps: float = 1e-3) -> OmegaSample:
    path = flow(model, x0, params)
    keep = path.times >= params.burn_in
    tail, t = path.states[keep], path.times[keep]
    if np.linalg.norm(tail.max(axis=0) - tail.min(axis=0)) < cluster_eps:
        return OmegaSample("equilibrium", tail[-1:].copy())
    d = np.linalg.norm(tail - tail[0], axis=1)
    ret = _returns(d, t, cluster_eps)
    if len(ret) >= 2:
        p1, p2 = ret[0] - t[0], ret[1] - ret[0]
        if abs(p1 - p2) <= 0.05 * max(p1, p2):
            period = 0.5 * (p1 + p2)
            one = t <= t[0] + period
            return OmegaSample("periodic", tail[one].copy(), period)
    return OmegaSample("other", tail.copy())


# ---------------------------------------------------------------- Birkhoff centres

def _classified(model, x, label):
    c = classify_equilibrium(model, x)
    return CandidatePoint(np.asarray(x, dtype=float), label, c.kind, c.eigenvalues)


def delay_as_ode(model: DelayModel) -> ModelSpec:
    """Equilibria of a delay equation solve ``-B x + A g(x) = 0``."""
    return ModelSpec(m=model.m, k=0, drift=lambda x: model.drift(x, x),
                     diffusion=lambda x: np.zeros(x.shape + (0,)), label=model.label)


def chafee_infante_equilibria(model: ModelSpec, amplitudes=(0.5, 1.0, 1.5)) -> EquilibriumList:
    n = model.m
    grid = np.arange(1, n + 1) / (n + 1)
    seeds = [np.zeros(n)]
    for a in amplitudes:
        for sign in (1, -1):
            seeds.append(sign * a * np.sin(np.pi * grid))
    return find_equilibria(model, seeds)


def _simplex_triangle(n=20):
    pts = [(i / n, j / n, 1 - (i + j) / n) for i in range(n + 1) for j in range(n + 1 - i)]
    return np.array(pts)


def birkhoff_candidates(name: str, params=None) -> CandidateSet:
    rec = make_params(name, params)
    model = zoo_build(name, rec)
    if name == "limit_cycle":
        theta = 2 * np.pi * np.arange(360) / 360
        circle = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return CandidateSet([_classified(model, np.zeros(2), "O")],
                            [CandidateCurve(circle, 2 * np.pi, "S1")], "analytic")
    if name == "lemniscate":
        r = np.sqrt(2.0)
        pts = [_classified(model, np.zeros(2), "O"),
               _classified(model, np.array([r, 0.0]), "P+"),
               _classified(model, np.array([-r, 0.0]), "P-")]
        return CandidateSet(pts, [], "analytic")
    if name == "may_leonard":
        case = may_leonard_case(rec.beta, rec.gamma)
        eq = may_leonard_equilibria(rec.beta, rec.gamma)
        pts = [_classified(model, x, lab) for lab, x in eq.items()]
        curves = []
        if case == "c":
            # periodic orbits y1 + y2 + y3 = 1, y1 y2 y3 = h on the simplex
            for h in (1 / 27 * f for f in (0.2, 0.4, 0.6, 0.8)):
                x0 = _ml_orbit_start(h)
                sample = omega_limit_sample(model, x0, SimParams(dt=1e-2, t_final=400.0),
                                            cluster_eps=1e-3)
                stride = max(1, len(sample.samples) // 720)
                curves.append(CandidateCurve(sample.samples[::stride], sample.period or np.nan,
                                             f"Gamma(h={h:.6f})"))
        if case == "f":
            curves.append(CandidateCurve(_simplex_triangle(), np.nan, "Sigma"))
        return CandidateSet(pts, curves, f"table case {case}")
    if name == "chafee_infante":
        roots = chafee_infante_equilibria(model)
        labels = {1: "phi1+", -1: "phi1-", 0: "0"}
        pts = []
        for x in roots:
            s = int(np.sign(np.round(x.sum(), 8)))
            pts.append(_classified(model, x, labels.get(s, f"Q{len(pts)}")))
        return CandidateSet(pts, [], "newton from sine seeds")
    if name == "hopfield":
        ode = delay_as_ode(model)
        roots = find_equilibria(ode, seed_grid([-3] * ode.m, [3] * ode.m, 5))
        return CandidateSet([CandidatePoint(x, f"p{i}") for i, x in enumerate(roots)], [],
                            "newton on the delay-free balance")
    if isinstance(model, ModelSpec):
        side = 5 if model.m <= 3 else 2
        roots = find_equilibria(model, seed_grid([-2] * model.m, [2] * model.m, side))
        return CandidateSet([_classified(model, x, f"Q{i}") for i, x in enumerate(roots)], [],
                            "newton from a seed grid")
    raise UnknownModel(name)  # pragma: no cover


def _ml_orbit_start(h):
    # point on y1 + y2 + y3 = 1 with y1 = y2 and y1^2 (1 - 2 y1) = h, y1 < 1/3
    from scipy.optimize import brentq

    y1 = brentq(lambda y: y * y * (1 - 2 * y) - h, 1e-9, 1 / 3)
    return np.array([y1, y1, 1 - 2 * y1])


# ---------------------------------------------------------------- output

def equilibria_csv(points) -> str:
    """Coordinates, classification, eigenvalue real/imag parts per row."""
    points = list(points)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if not points:
        w.writerow(["label", "classification"])
        return buf.getvalue()
    m = len(points[0].x)
    w.writerow(["label"] + [f"x{i + 1}" for i in range(m)] + ["classification"]
               + [f"eig_re_{i + 1}" for i in range(m)] + [f"eig_im_{i + 1}" for i in range(m)])
    for p in points:
        eig = p.eigenvalues if p.eigenvalues is not None else np.full(m, np.nan)
        w.writerow([p.label] + [repr(float(v)) for v in p.x] + [p.classification]
                   + [repr(float(v)) for v in np.real(eig)] + [repr(float(v)) for v in np.imag(eig)])
    return buf.getvalue()
