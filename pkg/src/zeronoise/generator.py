"""Generator evaluation and sampled Lyapunov-condition diagnostics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ModelSpec, as_state, default_step, jacobian_fd
from .errors import KappaOutOfRange, NonFiniteOutput
from .noise import AUXILIARY, RngStream

SHELL_FACTORS = (1.0, 1.5, 2.0)


@dataclass(frozen=True)
class LyapunovSpec:
    """Scalar function with optional analytic derivatives.

    Missing derivatives fall back to central differences (gradient step
    ``1e-5 (1 + |x|)``, Hessian step ``1e-4 (1 + |x|)``).
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    label: str = "V"

    def grad(self, x):
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float)
        return _fd_gradient(self.value, x, default_step(x))

    def hess(self, x):
        if self.hessian is not None:
            return np.asarray(self.hessian(x), dtype=float)
        if self.gradient is not None:
            return jacobian_fd(self.gradient, x, default_step(x, 1e-4))
        return _fd_hessian(self.value, x, default_step(x, 1e-4))


def _fd_gradient(v, x, h):
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    out = np.empty_like(x)
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        out[..., j] = (v(x + h * e) - v(x - h * e)) / (2.0 * h[..., 0])
    return out


def _fd_hessian(v, x, h):
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    hh = h[..., 0]
    out = np.empty(x.shape + (m,))
    v0 = v(x)
    eye = np.eye(m)
    for i in range(m):
        ei = eye[i] * h
        out[..., i, i] = (v(x + ei) - 2.0 * v0 + v(x - ei)) / (hh * hh)
        for j in range(i + 1, m):
            ej = eye[j] * h
            d = (v(x + ei + ej) - v(x + ei - ej) - v(x - ei + ej) + v(x - ei - ej)) / (4 * hh * hh)
            out[..., i, j] = d
            out[..., j, i] = d
    return out


def quadratic_lyapunov(m: int, scale: float = 1.0) -> LyapunovSpec:
    """``V(x) = scale * |x|^2`` with exact derivatives."""
    return LyapunovSpec(
        value=lambda x: scale * np.sum(x * x, axis=-1),
        gradient=lambda x: 2.0 * scale * x,
        hessian=lambda x: np.broadcast_to(2.0 * scale * np.eye(m), x.shape + (m,)),
        label=f"{scale:g}|x|^2",
    )


def constant_lyapunov(m: int, c: float = 0.0) -> LyapunovSpec:
    return LyapunovSpec(
        value=lambda x: np.full(x.shape[:-1], float(c)),
        gradient=lambda x: np.zeros_like(x),
        hessian=lambda x: np.zeros(x.shape + (m,)),
        label=f"const {c:g}",
    )


def generator_apply(V: LyapunovSpec, model: ModelSpec, epsilon: float, x) -> np.ndarray:
    """Generator of the epsilon-perturbed system applied to ``V`` at ``x``.

    Drift term plus ``eps^2 / 2 * tr(sigma sigma^T Hess V)`` plus the exact sum
    of the compensated jump integrand over the atom catalogue.
    """
    x = as_state(x, model.m)
    grad = V.grad(x)
    out = np.sum(grad * model.effective_drift(x, epsilon), axis=-1)
    if epsilon != 0.0 and model.k:
        sig = np.asarray(model.diffusion(x))
        a = np.einsum("...ik,...jk->...ij", sig, sig)
        out = out + 0.5 * epsilon ** 2 * np.einsum("...ij,...ij->...", a, V.hess(x))
    if model.jumps is not None and len(model.jumps) and epsilon != 0.0:
        v0 = V.value(x)
        for y, w in zip(model.jumps.marks, model.jumps.rates):
            jump = epsilon * model.jumps.jump_map(x, y)
            out = out + w * (V.value(x + jump) - v0 - np.sum(grad * jump, axis=-1))
    out = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(out)):
        raise NonFiniteOutput("generator value is not finite")
    return out


def sample_sphere(rng: np.random.Generator, m: int, radius: float, n: int) -> np.ndarray:
    """Uniform points on the sphere ``|x| = radius`` (normalised Gaussians)."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    z = rng.standard_normal((n, m))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    while np.any(norms == 0):  # pragma: no cover - measure-zero event
        z = rng.standard_normal((n, m))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
    return radius * z / norms


@dataclass
class ScanRow:
    R: float
    inf_V: float
    sup_LV: float

    @property
    def A_R(self) -> float:
        return -self.sup_LV


@dataclass
class LyapunovScan:
    rows: list
    epsilon: float
    violations: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["R", "infV", "supLV", "A_R"])
        for r in self.rows:
            w.writerow([repr(float(r.R)), repr(float(r.inf_V)), repr(float(r.sup_LV)),
                        repr(float(r.A_R))])
        return buf.getvalue()


def lyapunov_scan(V: LyapunovSpec, model: ModelSpec, epsilon: float, radii,
                  samples_per_shell: int, stream: RngStream) -> LyapunovScan:
    """Sampled evidence for the coercivity and drift conditions.

    For each radius ``R`` the region ``|x| > R`` is represented by the spheres
    ``R, 1.5 R, 2 R``; the last radius is followed by the same annulus.
    """
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly increasing")
    rng = stream.generator(AUXILIARY)
    shells = sorted({r * f for r in radii for f in SHELL_FACTORS})
    samples = {s: sample_sphere(rng, model.m, s, samples_per_shell) for s in shells}
    rows = []
    for r in radii:
        pts = np.concatenate([samples[s] for s in shells if s >= r])
        vals = V.value(pts)
        lv = generator_apply(V, model, epsilon, pts)
        rows.append(ScanRow(r, float(np.min(vals)), float(np.max(lv))))
    violations = []
    inf_v = [row.inf_V for row in rows]
    if any(b <= a for a, b in zip(inf_v, inf_v[1:])):
        violations.append("infV is not increasing in R (coercivity)")
    sup_lv = [row.sup_LV for row in rows]
    if any(b >= a for a, b in zip(sup_lv, sup_lv[1:])):
        violations.append("sup LV is not decreasing in R")
    if sup_lv[-1] > 0:
        violations.append("sup LV > 0 at the largest radius")
    return LyapunovScan(rows, epsilon, violations,
                        {"shell_factors": SHELL_FACTORS, "hessian_step": "1e-4*(1+|x|)"})


@dataclass
class GrowthReport:
    c1: float
    c2: float
    q: float
    passed: bool


def polynomial_growth_check(model: ModelSpec, q: float, radii, samples_per_shell: int,
                            stream: RngStream) -> GrowthReport:
    """Sampled constants of ``<b(x), x> <= -c1 |x|^q`` and
    ``|sigma|_F^2 / 2 + sum_j |F(x, y_j)|^2 w_j <= c2 |x|^q``."""
    if q < 2:
        raise ValueError("q must be >= 2")
    rng = stream.generator(AUXILIARY)
    shells = sorted({float(r) * f for r in radii for f in SHELL_FACTORS})
    pts = np.concatenate([sample_sphere(rng, model.m, s, samples_per_shell) for s in shells])
    norm_q = np.linalg.norm(pts, axis=1) ** q
    c1 = float(np.min(-np.sum(model.drift(pts) * pts, axis=1) / norm_q))
    spread = np.zeros(pts.shape[0])
    if model.k:
        spread += 0.5 * np.sum(np.asarray(model.diffusion(pts)) ** 2, axis=(-2, -1))
    if model.jumps is not None:
        for y, w in zip(model.jumps.marks, model.jumps.rates):
            spread += w * np.sum(model.jumps.jump_map(pts, y) ** 2, axis=-1)
    c2 = float(np.max(spread / norm_q))
    return GrowthReport(c1, c2, q, c1 > 0)


@dataclass
class HopfieldCondition:
    gamma: float
    threshold: float
    satisfied: bool


def hopfield_gamma(kappa: float) -> float:
    rk = math.sqrt(kappa)
    return 9.0 * ((2.0 * rk - 1.0) / (rk - 1.0) ** 2 + 1.0)


def hopfield_threshold(tau, kappa, L_tilde, A_norm) -> float:
    """Dissipation bound the smallest decay rate must exceed."""
    gamma = hopfield_gamma(kappa)
    denom = (1.0 - kappa * math.exp(-3.0 * tau)) ** 2
    num = gamma ** 2 * math.exp(6.0 * tau) * (16.0 * L_tilde ** 3 * A_norm ** 3) ** 2
    if denom == 0.0:
        return math.inf
    return num / denom


def hopfield_condition(b_min, tau, kappa, L_tilde, A_norm) -> HopfieldCondition:
    if not 1.0 < kappa < math.exp(3.0 * tau):
        raise KappaOutOfRange(f"kappa={kappa} must lie in (1, e^(3 tau)) = (1, {math.exp(3 * tau):.6g})")
    threshold = hopfield_threshold(tau, kappa, L_tilde, A_norm)
    return HopfieldCondition(hopfield_gamma(kappa), threshold, bool(b_min > threshold))
