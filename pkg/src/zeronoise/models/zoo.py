"""Named example systems with validated parameter records."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from ..core import (ITO, STRATONOVICH, JumpCatalogue, ModelSpec, additive_jumps,
                    constant_diffusion)
from ..errors import BadParams, UnknownModel
from ..integrate import DelayModel


# ---------------------------------------------------------------- parameter records

@dataclass(frozen=True)
class OUParams:
    m: int = 1
    sigma: float = 1.0

    def validate(self):
        if self.m < 1:
            raise BadParams("ou.m must be >= 1")


@dataclass(frozen=True)
class LinearParams:
    A: tuple = ((-1.0, 0.0), (0.0, -2.0))
    sigma: tuple = ((1.0, 0.0), (0.0, 1.0))

    def validate(self):
        A = np.asarray(self.A, dtype=float)
        S = np.asarray(self.sigma, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise BadParams("linear.A must be square")
        if S.ndim != 2 or S.shape[0] != A.shape[0]:
            raise BadParams("linear.sigma must have one row per state")


@dataclass(frozen=True)
class LimitCycleParams:
    shifted_noise: bool = False  # diffusion (r^2 - 1) I instead of r^2 I

    def validate(self):
        pass


@dataclass(frozen=True)
class LemniscateParams:
    sigma: float = 1.0  # diffusion sigma * I_2

    def validate(self):
        if self.sigma < 0:
            raise BadParams("lemniscate.sigma must be >= 0")


@dataclass(frozen=True)
class MayLeonardParams:
    beta: float = 0.8
    gamma: float = 0.7

    def validate(self):
        if not (self.beta > 0 and self.gamma > 0):
            raise BadParams("may_leonard requires beta > 0 and gamma > 0")


@dataclass(frozen=True)
class LogisticParams:
    def validate(self):
        pass


@dataclass(frozen=True)
class ChafeeInfanteParams:
    lam: float = 4.0
    n_grid: int = 64
    sigma: float = 1.0

    def validate(self):
        if not self.lam > 0:
            raise BadParams("chafee_infante.lam must be > 0")
        if self.n_grid < 3:
            raise BadParams("chafee_infante.n_grid must be >= 3")
        if self.sigma < 0:
            raise BadParams("chafee_infante.sigma must be >= 0")


@dataclass(frozen=True)
class HopfieldParams:
    b: tuple = (1.0, 1.5)
    A: tuple = ((0.03, -0.02), (0.01, 0.03))
    tau: float = 1.0
    gain: float = 1.0          # g_i(s) = tanh(gain * s) + offset
    offset: float = 1.0
    sigma: float = 1.0

    def validate(self):
        b = np.asarray(self.b, dtype=float)
        A = np.asarray(self.A, dtype=float)
        if b.ndim != 1 or np.any(b <= 0):
            raise BadParams("hopfield.b must be a list of positive numbers")
        if A.shape != (b.size, b.size):
            raise BadParams("hopfield.A must be square with len(b) rows")
        if not self.tau > 0:
            raise BadParams("hopfield.tau must be > 0")


@dataclass(frozen=True)
class GoodwinParams:
    N: int = 2
    b: tuple = (1.0, 1.0, 1.0)
    gains: tuple = (4.0, 4.0, 4.0)
    delta: int = -1
    sigma: float = 1.0
    jump_marks: tuple = ()
    jump_rates: tuple = ()

    def validate(self):
        if self.N < 0:
            raise BadParams("goodwin.N must be >= 0")
        if len(self.b) != self.N + 1 or any(v <= 0 for v in self.b):
            raise BadParams("goodwin.b needs N+1 positive entries")
        if len(self.gains) != self.N + 1 or any(v <= 0 for v in self.gains):
            raise BadParams("goodwin.gains needs N+1 positive entries")
        if self.delta not in (-1, 1):
            raise BadParams("goodwin.delta must be -1 or +1")
        if len(self.jump_marks) != len(self.jump_rates):
            raise BadParams("goodwin.jump_marks and jump_rates differ in length")


PARAMS = {
    "ou": OUParams,
    "linear": LinearParams,
    "limit_cycle": LimitCycleParams,
    "lemniscate": LemniscateParams,
    "may_leonard": MayLeonardParams,
    "logistic": LogisticParams,
    "chafee_infante": ChafeeInfanteParams,
    "hopfield": HopfieldParams,
    "goodwin": GoodwinParams,
}


def make_params(name: str, params=None):
    """Validated parameter record for ``name`` from a dict or record."""
    if name not in PARAMS:
        raise UnknownModel(f"unknown model {name!r}; known: {sorted(PARAMS)}")
    cls = PARAMS[name]
    if params is None:
        rec = cls()
    elif isinstance(params, cls):
        rec = params
    else:
        allowed = {f.name for f in fields(cls)}
        unknown = set(params) - allowed
        if unknown:
            raise BadParams(f"unknown {name} parameter(s): {sorted(unknown)}")
        conv = {}
        for key, value in params.items():
            conv[key] = _freeze(value)
        try:
            rec = cls(**conv)
        except TypeError as exc:
            raise BadParams(str(exc)) from exc
    rec.validate()
    return rec


def _freeze(value):
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return value


# ---------------------------------------------------------------- builders

def _ou(p: OUParams):
    mat = p.sigma * np.eye(p.m)
    diff, djac = constant_diffusion(mat)
    eye = np.eye(p.m)
    return ModelSpec(
        m=p.m, k=p.m, drift=lambda x: -x, diffusion=diff,
        drift_jacobian=lambda x: np.broadcast_to(-eye, x.shape[:-1] + (p.m, p.m)),
        diffusion_jacobian=djac, label="ou",
        params={"constant_diffusion": True, **asdict(p)})


def _linear(p: LinearParams):
    A = np.asarray(p.A, dtype=float)
    S = np.asarray(p.sigma, dtype=float)
    diff, djac = constant_diffusion(S)
    return ModelSpec(
        m=A.shape[0], k=S.shape[1], diffusion=diff,
        drift=lambda x: np.sum(x[..., None, :] * A, axis=-1),
        drift_jacobian=lambda x: np.broadcast_to(A, x.shape[:-1] + A.shape),
        diffusion_jacobian=djac, label="linear",
        params={"constant_diffusion": True, "A": A.tolist(), "sigma": S.tolist()})


def _limit_cycle(p: LimitCycleParams):
    shift = 1.0 if p.shifted_noise else 0.0

    def drift(v):
        x, y = v[..., 0], v[..., 1]
        r2 = x * x + y * y
        return np.stack([x - y - x * r2, x + y - y * r2], axis=-1)

    def jac(v):
        x, y = v[..., 0], v[..., 1]
        r2 = x * x + y * y
        return np.stack([
            np.stack([1 - r2 - 2 * x * x, -1 - 2 * x * y], axis=-1),
            np.stack([1 - 2 * x * y, 1 - r2 - 2 * y * y], axis=-1),
        ], axis=-2)

    def diffusion(v):
        s = (v[..., 0] ** 2 + v[..., 1] ** 2 - shift)[..., None, None]
        return s * np.eye(2)

    def diffusion_jac(v):
        # d(s delta_ij)/dx_l = 2 x_l delta_ij
        return 2.0 * np.eye(2)[..., None] * v[..., None, None, :]

    return ModelSpec(m=2, k=2, drift=drift, diffusion=diffusion, drift_jacobian=jac,
                     diffusion_jacobian=diffusion_jac, label="limit_cycle",
                     params=asdict(p))


def lemniscate_invariant(v):
    """``I(x, y) = (x^2 + y^2)^2 - 4 (x^2 - y^2)``; zero on the lemniscate."""
    x, y = v[..., 0], v[..., 1]
    r2 = x * x + y * y
    return r2 * r2 - 4.0 * (x * x - y * y)


def _lemniscate_parts(v):
    x, y = v[..., 0], v[..., 1]
    r2 = x * x + y * y
    inv = r2 * r2 - 4.0 * (x * x - y * y)
    ix = 4.0 * x * r2 - 8.0 * x
    iy = 4.0 * y * r2 + 8.0 * y
    s = 1.0 + inv * inv
    f = inv * (inv * inv + 4.0) / (4.0 * s ** 1.75)
    g = (inv * inv + 4.0) / (4.0 * s ** 1.375)
    return x, y, r2, inv, ix, iy, s, f, g


def _lemniscate(p: LemniscateParams):
    def drift(v):
        x, y, r2, inv, ix, iy, s, f, g = _lemniscate_parts(v)
        return np.stack([-f * ix - g * iy, -f * iy + g * ix], axis=-1)

    def jac(v):
        x, y, r2, inv, ix, iy, s, f, g = _lemniscate_parts(v)
        fp = ((3 * inv ** 2 + 4) * s - 3.5 * inv ** 2 * (inv ** 2 + 4)) / (4 * s ** 2.75)
        gp = (2 * inv * s - 2.75 * inv * (inv ** 2 + 4)) / (4 * s ** 2.375)
        hxx = 4 * r2 + 8 * x * x - 8
        hxy = 8 * x * y
        hyy = 4 * r2 + 8 * y * y + 8
        # b = -f grad I - g J grad I with J = [[0, 1], [-1, 0]]
        j11 = -fp * ix * ix - f * hxx - gp * iy * ix - g * hxy
        j12 = -fp * ix * iy - f * hxy - gp * iy * iy - g * hyy
        j21 = -fp * iy * ix - f * hxy + gp * ix * ix + g * hxx
        j22 = -fp * iy * iy - f * hyy + gp * ix * iy + g * hxy
        return np.stack([np.stack([j11, j12], -1), np.stack([j21, j22], -1)], -2)

    diff, djac = constant_diffusion(p.sigma * np.eye(2))
    return ModelSpec(m=2, k=2, drift=drift, diffusion=diff, drift_jacobian=jac,
                     diffusion_jacobian=djac, label="lemniscate",
                     params={"constant_diffusion": True, **asdict(p)})


def _may_leonard(p: MayLeonardParams):
    beta, gamma = p.beta, p.gamma

    def drift(y):
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        return np.stack([
            y1 * (1 - y1 - beta * y2 - gamma * y3),
            y2 * (1 - y2 - beta * y3 - gamma * y1),
            y3 * (1 - y3 - beta * y1 - gamma * y2),
        ], axis=-1)

    def jac(y):
        out = np.zeros(y.shape[:-1] + (3, 3))
        for i in range(3):
            a, b_, c = i, (i + 1) % 3, (i + 2) % 3
            out[..., a, a] = 1 - 2 * y[..., a] - beta * y[..., b_] - gamma * y[..., c]
            out[..., a, b_] = -beta * y[..., a]
            out[..., a, c] = -gamma * y[..., a]
        return out

    return ModelSpec(m=3, k=1, drift=drift, diffusion=lambda y: y[..., :, None],
                     noise_kind=STRATONOVICH, drift_jacobian=jac,
                     diffusion_jacobian=lambda y: np.broadcast_to(
                         np.eye(3)[:, None, :], y.shape[:-1] + (3, 1, 3)),
                     ito_correction=lambda y: 0.5 * y, label="may_leonard",
                     params=asdict(p))


def _logistic(p: LogisticParams):
    return ModelSpec(m=1, k=1, drift=lambda g: g * (1 - g),
                     diffusion=lambda g: g[..., :, None], noise_kind=STRATONOVICH,
                     drift_jacobian=lambda g: (1 - 2 * g)[..., None],
                     diffusion_jacobian=lambda g: np.ones(g.shape[:-1] + (1, 1, 1)),
                     ito_correction=lambda g: 0.5 * g, label="logistic", params={})


def _chafee_infante(p: ChafeeInfanteParams):
    n = p.n_grid
    h = 1.0 / (n + 1)
    lam2 = p.lam ** 2
    inv_h2 = 1.0 / (h * h)

    def drift(u):
        lap = -2.0 * u
        lap[..., 1:] += u[..., :-1]
        lap[..., :-1] += u[..., 1:]
        return lap * inv_h2 + lam2 * u * (1.0 - u * u)

    lap_mat = (np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1)
               + np.diag(np.ones(n - 1), -1)) * inv_h2

    def jac(u):
        out = np.broadcast_to(lap_mat, u.shape[:-1] + (n, n)).copy()
        idx = np.arange(n)
        out[..., idx, idx] += lam2 * (1.0 - 3.0 * u * u)
        return out

    diff, djac = constant_diffusion(p.sigma / np.sqrt(h) * np.eye(n))
    return ModelSpec(m=n, k=n, drift=drift, diffusion=diff, drift_jacobian=jac,
                     diffusion_jacobian=djac, label="chafee_infante",
                     params={"constant_diffusion": True, "grid_spacing": h, **asdict(p)})


def goodwin_nonlinearities(p: GoodwinParams):
    """The ``f^i`` sigmoids; the last one carries the feedback sign."""
    signs = np.ones(p.N + 1)
    signs[-1] = p.delta
    gains = np.asarray(p.gains, dtype=float)

    def f(s):
        return signs * np.tanh(gains * s)

    def fprime(s):
        return signs * gains / np.cosh(gains * s) ** 2

    return f, fprime


def _goodwin(p: GoodwinParams):
    n = p.N + 1
    b = np.asarray(p.b, dtype=float)
    f, fprime = goodwin_nonlinearities(p)
    nxt = (np.arange(n) + 1) % n

    def drift(x):
        return -b * x + f(x[..., nxt])

    def jac(x):
        out = np.zeros(x.shape[:-1] + (n, n))
        idx = np.arange(n)
        out[..., idx, idx] = -b
        out[..., idx, nxt] += fprime(x[..., nxt])
        return out

    diff, djac = constant_diffusion(p.sigma * np.eye(n))
    jumps = None
    if p.jump_rates:
        jumps = additive_jumps(np.asarray(p.jump_marks, dtype=float), p.jump_rates)
    return ModelSpec(m=n, k=n, drift=drift, diffusion=diff, jumps=jumps, drift_jacobian=jac,
                     diffusion_jacobian=djac, label="goodwin",
                     params={"constant_diffusion": True, **asdict(p)})


def _hopfield(p: HopfieldParams):
    b = np.asarray(p.b, dtype=float)
    A = np.asarray(p.A, dtype=float)
    m = b.size
    gain, offset, sigma = p.gain, p.offset, p.sigma

    def g(x):
        return np.tanh(gain * x) + offset

    def sig(x):
        return np.broadcast_to(sigma * np.eye(m), x.shape[:-1] + (m, m))

    return DelayModel(B=np.diag(b), A=A, g=g, sigma=sig, tau=p.tau, k=m, label="hopfield",
                      params={**asdict(p), "lipschitz_g": abs(gain), "A_norm": float(
                          np.linalg.norm(A, 2)), "b_min": float(b.min())})


_BUILDERS = {
    "ou": _ou,
    "linear": _linear,
    "limit_cycle": _limit_cycle,
    "lemniscate": _lemniscate,
    "may_leonard": _may_leonard,
    "logistic": _logistic,
    "chafee_infante": _chafee_infante,
    "hopfield": _hopfield,
    "goodwin": _goodwin,
}


def zoo_build(name: str, params=None):
    """Build a named model (a :class:`DelayModel` for ``"hopfield"``)."""
    rec = make_params(name, params)
    return _BUILDERS[name](rec)


def zoo_names():
    return sorted(_BUILDERS)


# ---------------------------------------------------------------- published facts

def may_leonard_equilibria(beta: float, gamma: float) -> dict:
    """O, the axial points, P and (when they exist) the planar equilibria."""
    eq = {
        "O": np.zeros(3),
        "R1": np.array([1.0, 0, 0]),
        "R2": np.array([0, 1.0, 0]),
        "R3": np.array([0, 0, 1.0]),
        "P": np.ones(3) / (1 + beta + gamma),
    }
    if (1 - beta) * (1 - beta * gamma) > 0 and (1 - gamma) * (1 - beta * gamma) > 0:
        d = 1 - beta * gamma
        eq["R12"] = np.array([1 - beta, 1 - gamma, 0]) / d
        eq["R23"] = np.array([0, 1 - beta, 1 - gamma]) / d
        eq["R31"] = np.array([1 - gamma, 0, 1 - beta]) / d
    return eq


def may_leonard_case(beta: float, gamma: float) -> str:
    """Phase-portrait case letter (a-f) on the carrying simplex."""
    if beta == 1 and gamma == 1:
        return "f"
    if beta < 1 and gamma < 1:
        return "a"
    if beta > 1 and gamma > 1:
        return "e"
    s = beta + gamma
    if np.isclose(s, 2.0):
        return "c"
    return "b" if s < 2 else "d"


def published_equilibria(name: str, params=None) -> dict:
    rec = make_params(name, params)
    if name == "lemniscate":
        r = np.sqrt(2.0)
        return {"O": np.zeros(2), "P+": np.array([r, 0.0]), "P-": np.array([-r, 0.0])}
    if name == "may_leonard":
        return may_leonard_equilibria(rec.beta, rec.gamma)
    if name == "limit_cycle":
        return {"O": np.zeros(2)}
    if name == "ou":
        return {"O": np.zeros(rec.m)}
    if name == "chafee_infante":
        return {"0": np.zeros(rec.n_grid)}
    if name == "logistic":
        return {"0": np.zeros(1), "1": np.ones(1)}
    raise UnknownModel(f"no published equilibria for {name!r}")


# ---------------------------------------------------------------- localized diffusion

def smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def _smoothstep5_prime(t):
    inside = (t > 0) & (t < 1)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * t * t * (1.0 - t) ** 2, 0.0)


def cutoff_diffusion(model: ModelSpec, r: float, M) -> ModelSpec:
    """Replace the diffusion by ``s(|x|) M``: zero on the ball of radius ``r``
    and exactly ``M`` outside radius ``r + 1``."""
    if not r > 0:
        raise BadParams("cutoff radius must be positive")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != model.m:
        raise BadParams("M must have one row per state component")
    m, k = M.shape

    def diffusion(x):
        s = smoothstep5(np.linalg.norm(x, axis=-1) - r)
        return s[..., None, None] * M

    def diffusion_jac(x):
        norm = np.linalg.norm(x, axis=-1)
        ds = _smoothstep5_prime(norm - r)
        unit = np.divide(x, norm[..., None], out=np.zeros_like(x), where=norm[..., None] > 0)
        return M[..., None] * (ds[..., None] * unit)[..., None, None, :]

    params = {k_: v for k_, v in model.params.items() if k_ != "constant_diffusion"}
    params.update(cutoff_radius=r)
    return replace(model, k=k, diffusion=diffusion, diffusion_jacobian=diffusion_jac,
                   noise_kind=ITO, ito_correction=None, params=params,
                   label=f"{model.label}+cutoff")
