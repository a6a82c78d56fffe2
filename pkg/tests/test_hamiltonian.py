import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from mayer_sens.errors import ModelInvalid, NonsmoothPoint
from mayer_sens.hamiltonian import (
    make_affine_control_model,
    make_ball_model,
    make_interval_box_model,
    quadratic_cost,
    validate_model,
)

SAMPLES = settings(max_examples=100, deadline=None)


def pendulum_model(fd=False):
    h = lambda x: np.array([x[1], -np.sin(x[0])])
    g = lambda x: np.eye(2)
    if fd:
        return make_affine_control_model(h, g, 2, 2)
    return make_affine_control_model(
        h, g, 2, 2,
        h_jac=lambda x: np.array([[0.0, 1.0], [-np.cos(x[0]), 0.0]]),
        h_hess=lambda x: np.array([[[0.0, 0.0], [0.0, 0.0]],
                                   [[np.sin(x[0]), 0.0], [0.0, 0.0]]]),
        g_jac=lambda x: np.zeros((2, 2, 2)),
        g_hess=lambda x: np.zeros((2, 2, 2, 2)),
    )


MODELS = {
    "box1": make_interval_box_model(1, 1.0),
    "box2": make_interval_box_model(2, 0.7),
    "ball2": make_ball_model(2, 1.0),
    "pendulum": pendulum_model(),
}

vec2 = st.lists(st.floats(-3, 3), min_size=2, max_size=2).map(np.array)
unit_ok = lambda p: np.all(np.abs(p) > 1e-3)


# --- closed-form queries ----------------------------------------------------

def test_box_values():
    assert MODELS["box1"].eval(np.zeros(1), np.array([3.0])) == 3.0
    assert MODELS["box1"].eval(np.array([5.0]), np.array([0.0])) == 0.0
    box = make_interval_box_model(2, 1.0)
    assert box.eval(np.zeros(2), np.array([3.0, -4.0])) == 7.0


def test_ball_queries():
    m = MODELS["ball2"]
    p = np.array([3.0, 4.0])
    assert m.eval(np.zeros(2), p) == pytest.approx(5.0, abs=1e-15)
    np.testing.assert_allclose(m.grad_p(np.zeros(2), p), [0.6, 0.8], atol=1e-15)


# frozen from the symbolic Hessian of |p| at p = (1, 0)
HPP_BALL_AT_E1 = np.array([[0.0, 0.0], [0.0, 1.0]])


def test_ball_hpp_frozen():
    Hpp = MODELS["ball2"].hess(np.zeros(2), np.array([1.0, 0.0]))[3]
    np.testing.assert_allclose(Hpp, HPP_BALL_AT_E1, atol=1e-14)


def test_ball_hpp_oracles():
    p1, p2 = sympy.symbols("p1 p2", real=True)
    sym = sympy.hessian(sympy.sqrt(p1 ** 2 + p2 ** 2), (p1, p2)).subs({p1: 1, p2: 0})
    np.testing.assert_allclose(np.array(sym, dtype=float), HPP_BALL_AT_E1, atol=1e-15)
    # central differences of grad_p
    m, h = MODELS["ball2"], 1e-6
    fd = np.stack([(m.grad_p(np.zeros(2), np.array([1.0, 0.0]) + h * e)
                    - m.grad_p(np.zeros(2), np.array([1.0, 0.0]) - h * e)) / (2 * h)
                   for e in np.eye(2)], axis=1)
    np.testing.assert_allclose(fd, HPP_BALL_AT_E1, atol=1e-8)


def test_box_refuses_derivative_at_kink():
    with pytest.raises(NonsmoothPoint):
        MODELS["box2"].grad_p(np.zeros(2), np.array([1.0, 0.0]))
    with pytest.raises(NonsmoothPoint):
        MODELS["ball2"].hess(np.zeros(2), np.zeros(2))


def test_invalid_models():
    with pytest.raises(ModelInvalid):
        make_interval_box_model(1, -1.0)
    with pytest.raises(ModelInvalid):
        make_affine_control_model(lambda x: np.zeros(2), lambda x: np.array([[1.0], [0.0]]), 2, 1)
    with pytest.raises(ModelInvalid):
        make_affine_control_model(lambda x: np.zeros(2), lambda x: np.array([[1.0, 0.0], [0.0, 0.0]]),
                                  2, 2)


def test_quadratic_cost():
    c = quadratic_cost([[2.0]], [1.0], 3.0)
    assert c.value(np.array([2.0])) == pytest.approx(0.5 * 2 * 4 + 2 + 3)
    np.testing.assert_allclose(c.grad(np.array([2.0])), [5.0])
    np.testing.assert_allclose(c.hess(np.array([2.0])), [[2.0]])


# --- validate_model -------------------------------------------------------------

def test_validate_box():
    rep = validate_model(MODELS["box1"], 100)
    assert rep.passed
    assert rep.fitted_constants["semiconvexity_c"] == 0.0


def test_validate_affine_euler_identity():
    m = make_affine_control_model(lambda x: x, lambda x: np.ones((1, 1)), 1, 1)
    x, p = np.array([2.0]), np.array([3.0])
    assert abs(m.eval(x, p) - m.grad_p(x, p) @ p) <= 1e-9
    assert validate_model(m, 100).passed


def test_validate_pendulum_psd():
    rep = validate_model(MODELS["pendulum"], 100)
    assert rep.passed
    psd = next(n for n in rep.nodes if n.label == "Hpp_psd")
    assert psd.residual <= 1e-9


def test_pendulum_hpp_closed_form():
    # g = I, so H_pp = (I - w w^T)/|p| with w = p/|p|; its eigenvalues are 0 and 1/|p|
    rng = np.random.default_rng(3)
    for _ in range(100):
        x, p = rng.normal(size=2), rng.normal(size=2)
        Hpp = MODELS["pendulum"].hess(x, p)[3]
        w = p / np.linalg.norm(p)
        np.testing.assert_allclose(Hpp, (np.eye(2) - np.outer(w, w)) / np.linalg.norm(p),
                                   atol=1e-12)
        assert np.linalg.eigvalsh(Hpp).min() >= -1e-9


def test_fd_callbacks_match_closed_form():
    exact, fd = MODELS["pendulum"], pendulum_model(fd=True)
    rng = np.random.default_rng(4)
    for _ in range(20):
        x, p = rng.normal(size=2), rng.normal(size=2)
        for a, b in zip(exact.hess(x, p), fd.hess(x, p)):
            np.testing.assert_allclose(a, b, atol=1e-6)


# --- structural properties ------------------------------------------------------

@pytest.mark.parametrize("name", sorted(MODELS))
@SAMPLES
@given(x=vec2, p=vec2, lam=st.floats(0.01, 100))
def test_homogeneity_and_euler(name, x, p, lam):
    m = MODELS[name]
    x, p = x[: m.dim], p[: m.dim]
    Hv = m.eval(x, p)
    assert abs(m.eval(x, lam * p) - lam * Hv) <= 1e-9 * lam * (1 + abs(Hv))
    if unit_ok(p):
        assert abs(Hv - m.grad_p(x, p) @ p) <= 1e-9 * (1 + abs(Hv))


@pytest.mark.parametrize("name", sorted(MODELS))
@SAMPLES
@given(x=vec2, p=vec2, q=vec2)
def test_convexity_in_p(name, x, p, q):
    m = MODELS[name]
    x, p, q = x[: m.dim], p[: m.dim], q[: m.dim]
    assert m.eval(x, 0.5 * (p + q)) <= 0.5 * (m.eval(x, p) + m.eval(x, q)) + 1e-12


@pytest.mark.parametrize("name", sorted(MODELS))
@SAMPLES
@given(x=vec2, p=vec2)
def test_hessian_blocks(name, x, p):
    m = MODELS[name]
    x, p = x[: m.dim], p[: m.dim]
    if not unit_ok(p):
        return
    Hxx, Hxp, Hpx, Hpp = m.hess(x, p)
    np.testing.assert_allclose(Hpx, Hxp.T, atol=1e-12)
    np.testing.assert_allclose(Hpp, Hpp.T, atol=1e-12)
    assert np.linalg.eigvalsh(Hpp).min() >= -1e-9
    assert np.linalg.norm(Hpp @ p) <= 1e-8 * (1 + np.linalg.norm(Hpp, 2)) * np.linalg.norm(p)
