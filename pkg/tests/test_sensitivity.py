import numpy as np
import pytest

from zeronoise.core import additive_jumps
from zeronoise.errors import JumpsUnsupported, MissingNoiseRecord, StratonovichNotConverted
from zeronoise.integrate import SimParams, em_path
from zeronoise.models import zoo_build
from zeronoise.noise import derive_stream
from zeronoise.sensitivity import (bel_gradient, bel_weights, fd_gradient, gradient_csv,
                                   variational_path)

P = SimParams(dt=1e-2, t_final=1.0, epsilon=0.2)


def _first(x):
    return x[..., 0]


def test_variational_zero_direction(limit_cycle):
    base = em_path(limit_cycle, [0.5, 0.2], P.with_(record_noise=True), derive_stream(0, 0))
    v = variational_path(limit_cycle, base, [0.0, 0.0], 0.2)
    np.testing.assert_array_equal(v.eta, np.zeros_like(v.eta))


def test_variational_matches_finite_difference(limit_cycle):
    # eta is the exact derivative of the Euler map, so a central difference on
    # the same increments agrees to O(delta^2)
    p = P.with_(record_noise=True)
    x, h, d = np.array([0.5, 0.2]), np.array([0.3, -1.0]), 1e-5
    base = em_path(limit_cycle, x, p, derive_stream(1, 0))
    v = variational_path(limit_cycle, base, h, 0.2)
    up = em_path(limit_cycle, x + d * h, p, derive_stream(1, 0)).states[-1]
    down = em_path(limit_cycle, x - d * h, p, derive_stream(1, 0)).states[-1]
    np.testing.assert_allclose(v.eta[-1], (up - down) / (2 * d), atol=1e-8)


def test_variational_requires_record(limit_cycle):
    base = em_path(limit_cycle, [0.5, 0.2], P, derive_stream(0, 0))
    with pytest.raises(MissingNoiseRecord):
        variational_path(limit_cycle, base, [1.0, 0.0], 0.2)
    with pytest.raises(StratonovichNotConverted):
        variational_path(zoo_build("may_leonard"), base, [1.0, 0.0, 0.0], 0.2)


def test_jump_models_rejected(ou):
    from dataclasses import replace
    jumpy = replace(ou, jumps=additive_jumps([[0.5]], [1.0]))
    with pytest.raises(JumpsUnsupported):
        bel_gradient(jumpy, _first, 1.0, [1.0], [1.0], 10, P, 0)


def test_bel_constant_phi_is_zero(ou):
    est = bel_gradient(ou, lambda x: np.ones(x.shape[0]), 1.0, [1.0], [1.0], 20000, P, 3)
    assert abs(est.estimate) <= 3 * est.std_error


def test_bel_weight_is_centred(limit_cycle):
    streams = [derive_stream(6, i) for i in range(20000)]
    _, w = bel_weights(limit_cycle, [0.5, 0.2], [1.0, 0.5], 1.0, P.with_(dt=2e-2), streams)
    assert abs(w.mean()) <= 4 * w.std(ddof=1) / np.sqrt(w.size)


def test_bel_variance_scales_with_n(ou):
    a = bel_gradient(ou, _first, 1.0, [1.0], [1.0], 10000, P, 7)
    b = bel_gradient(ou, _first, 1.0, [1.0], [1.0], 20000, P, 7)
    ratio = a.std_error ** 2 / b.std_error ** 2
    assert 2 * 0.75 <= ratio <= 2 * 1.25


def test_bel_thread_invariance(ou):
    a = bel_gradient(ou, _first, 1.0, [1.0], [1.0], 3000, P, 2, threads=1, batch_size=500)
    b = bel_gradient(ou, _first, 1.0, [1.0], [1.0], 3000, P, 2, threads=4, batch_size=500)
    assert a == b


@pytest.mark.slow
def test_bel_linear_two_dimensional():
    model = zoo_build("linear", {"A": [[-1.0, 0.0], [0.0, -2.0]],
                                 "sigma": [[1.0, 0.0], [0.0, 1.0]]})
    phi = lambda x: x[..., 0] + x[..., 1]
    est = bel_gradient(model, phi, 1.0, [0.5, 0.5], [1.0, 1.0], 10 ** 5, P, 11)
    exact = np.exp(-1) + np.exp(-2)
    assert abs(est.estimate - exact) <= 3 * est.std_error
    fd = fd_gradient(model, phi, 1.0, [0.5, 0.5], [1.0, 1.0], 1e-3, 10 ** 4, P, 11)
    # the map is linear so the difference quotient is the Euler derivative
    assert abs(fd.estimate - 0.99 ** 100 - 0.98 ** 100) < 1e-9
    assert abs(est.estimate - fd.estimate) <= 3 * np.hypot(est.std_error, fd.std_error)


def test_fd_deterministic_matches_flow_derivative(limit_cycle):
    p = SimParams(dt=1e-2, t_final=1.0, epsilon=0.0, record_noise=True)
    base = em_path(limit_cycle, [0.5, 0.2], p, derive_stream(0, 0))
    eta = variational_path(limit_cycle, base, [1.0, 0.0], 0.0).eta[-1]
    fd = fd_gradient(limit_cycle, _first, 1.0, [0.5, 0.2], [1.0, 0.0], 1e-4, 1, p, 0)
    assert abs(fd.estimate - eta[0]) < 1e-7


def test_fd_ou_analytic(ou):
    est = fd_gradient(ou, _first, 1.0, [1.0], [1.0], 1e-2, 2000, P, 0)
    # Euler with dt = 0.01 gives 0.99^100 for every path
    assert est.estimate == pytest.approx(0.99 ** 100, rel=1e-10)
    assert abs(est.estimate - np.exp(-1)) < 3 * est.std_error + 2e-3


def test_gradient_csv(ou):
    est = fd_gradient(ou, _first, 1.0, [1.0], [1.0], 1e-2, 10, P, 0)
    lines = gradient_csv([est]).splitlines()
    assert lines[0] == "estimate,std_error,n_paths,dt,method"
    assert lines[1].endswith(",10,0.01,fd")
