import dataclasses

import numpy as np
import pytest

from conftest import BOX_SPEC, ball_scenario, box_scenario
from mayer_sens import sensitivity as S
from mayer_sens.characteristics import integrate_characteristics
from mayer_sens.errors import DegenerateCostate, PremiseFailed
from mayer_sens.hamiltonian import ControlScenario, make_interval_box_model, quadratic_cost
from mayer_sens.hjb import solve_value_function

ALPHA = 0.4  # arc direction off the grid axes


def exact_box_gradient(t, x):
    return np.array([2.0 * (x[0] + t - 1.0)])


# --- first order -------------------------------------------------------------------

def test_first_order_pass_with_zero_c(box_grid):
    rep = S.verify_first_order_propagation(box_scenario(), box_grid)
    assert rep.passed
    assert len(rep.nodes) == S.DEFAULT_SAMPLE_TIMES
    assert rep.fitted_constants["c_proximal"] == pytest.approx(0.0, abs=1e-9)


def test_first_order_wrong_costate_sign(box_grid):
    sc = box_scenario()
    arc = integrate_characteristics(sc, steps=400)
    flipped = dataclasses.replace(arc, costates=-arc.costates)
    rep = S.verify_first_order_propagation(sc, box_grid, arc=flipped)
    assert rep.verdict == "fail"
    assert not rep.nodes[0].ok


def test_first_order_affine_value():
    # phi(z) = z: V(t, x) = x - (T - t) is affine, remainder identically zero
    sc = ControlScenario(make_interval_box_model(1, 1.0), quadratic_cost([[0.0]], [1.0]),
                         0.0, 1.0, [0.5])
    grid = solve_value_function(sc, BOX_SPEC, 2)
    rep = S.verify_first_order_propagation(sc, grid)
    assert rep.passed
    assert rep.fitted_constants["c_proximal"] == pytest.approx(0.0, abs=1e-9)


def test_degenerate_costate_is_reported(box_grid):
    # from x0 = 0.5 at t0 = 0 the optimal endpoint is z = 0, where phi' vanishes
    with pytest.raises(DegenerateCostate):
        S.verify_gradient_relation(box_scenario(x0=0.5), box_grid)


# --- gradient relation -----------------------------------------------------------------

def test_gradient_relation(box_grid):
    rep = S.verify_gradient_relation(box_scenario(), box_grid, exact_gradient=exact_box_gradient)
    assert rep.passed
    grid_nodes = [n for n in rep.nodes if n.label != "closed form"]
    exact_nodes = [n for n in rep.nodes if n.label == "closed form"]
    assert all(n.residual <= 5e-2 for n in grid_nodes)
    assert exact_nodes and all(n.residual <= 1e-8 for n in exact_nodes)


def test_gradient_relation_premise_at_kink(ball_grid):
    # the characteristic through the origin at t = 0: V(0, .) has a concave kink there
    with pytest.raises(PremiseFailed):
        S.verify_gradient_relation(ball_scenario(t0=0.0), ball_grid)


def test_gradient_relation_ball(ball_grid):
    sc = ball_scenario(t0=0.25)
    assert S.verify_gradient_relation(sc, ball_grid).passed


# --- subjets and superjets ---------------------------------------------------------------

def test_subjet_exact(box_grid):
    rep = S.verify_subjet_propagation(box_scenario(), box_grid, [[-2.0]])
    assert rep.passed
    assert len(rep.details["jets"]) == S.DEFAULT_SAMPLE_TIMES
    for jet in rep.details["jets"]:
        assert min(r["m"] for r in jet["m_table"]) >= -1e-3


def test_subjet_smaller_curvature_passes(box_grid):
    # candidate Q = -R0 = 1.5 lies below the Hessian 2: remainder +0.25 h^2
    assert S.verify_subjet_propagation(box_scenario(), box_grid, [[-1.5]]).passed


def test_subjet_larger_curvature_fails_premise(box_grid):
    # candidate Q = 2.5 exceeds the Hessian: remainder -0.25 h^2, refused at t0
    with pytest.raises(PremiseFailed) as info:
        S.verify_subjet_propagation(box_scenario(), box_grid, [[-2.5]])
    assert info.value.report.verdict == "fail"


@pytest.mark.parametrize("Q", [2.0, 3.0])
def test_superjet_box(box_grid, Q):
    assert S.verify_superjet_propagation(box_scenario(), box_grid, [[Q]]).passed


def test_superjet_cost_premise(box_grid):
    with pytest.raises(PremiseFailed):
        S.verify_superjet_propagation(box_scenario(), box_grid, [[1.0]])


def test_superjet_ball_frontier(ball_grid):
    sc = ball_scenario()
    rep = S.verify_superjet_propagation(sc, ball_grid, -np.eye(2))
    assert rep.passed
    dt = (sc.T - sc.t0) / S.DEFAULT_STEPS
    assert abs(rep.fitted_constants["frontier"] - (sc.T - 1)) <= 5 * dt
    assert rep.fitted_constants["conjugate_time"] == pytest.approx(0.0, abs=1e-3)


# --- Hessian propagation -----------------------------------------------------------------

@pytest.mark.parametrize("direction", ["forward", "backward"])
def test_hessian_box(box_grid, direction):
    rep = S.verify_hessian_propagation(box_scenario(), box_grid, direction)
    assert rep.passed
    worst = max(n.residual for n in rep.nodes if n.label == "R vs -grid Hessian")
    assert worst <= 1e-1
    assert rep.fitted_constants["quotient_vs_direct"] <= 1e-8


def test_hessian_ball_off_axis(ball_grid):
    sc = ball_scenario(angle=ALPHA, t0=0.0)
    rep = S.verify_hessian_propagation(sc, ball_grid, "backward", window=(0.45, 1.0),
                                       relative_tol=5e-2)
    assert rep.passed


@pytest.mark.xfail(strict=True, reason="grid Hessian biased along the axis ridge of the scheme")
def test_hessian_ball_on_axis(ball_grid):
    # on a 201^2 grid the relative error is 0.10 to 0.16 for t in [0.1, 0.5]
    rep = S.verify_hessian_propagation(ball_scenario(t0=0.0), ball_grid, "backward",
                                       window=(0.1, 1.0), relative_tol=5e-2)
    assert rep.passed


# --- regularity probe ---------------------------------------------------------------------

def test_probe_smooth_tube(box_grid):
    assert S.probe_c2_regularity(box_scenario(), box_grid).passed


@pytest.mark.parametrize("t", [0.0, 0.5])
def test_probe_refuses_on_kink(box_grid, t):
    sc = box_scenario(x0=1.0 - t, t0=t)
    with pytest.raises(PremiseFailed, match="q = 0"):
        S.probe_c2_regularity(sc, box_grid)


def test_probe_passes_beside_kink(box_grid):
    assert S.probe_c2_regularity(box_scenario(x0=0.8, t0=0.5), box_grid).passed


@pytest.mark.xfail(strict=True, reason="tube Hessian jump 0.17 on the axis ridge exceeds 0.146")
def test_probe_ball_on_axis(ball_grid):
    sc = ball_scenario(t0=0.5)
    assert S.probe_c2_regularity(sc, ball_grid).passed


def test_probe_ball_off_axis(ball_grid):
    z = np.array([np.cos(ALPHA), np.sin(ALPHA)])
    sc = ControlScenario(ball_scenario().model, ball_scenario().cost, 0.5, 1.0, 0.5 * z,
                         terminal_state=z)
    rep = S.probe_c2_regularity(sc, ball_grid)
    assert rep.passed
    assert rep.fitted_constants.get("conjugate_time") is None


def test_sample_times():
    np.testing.assert_allclose(S.sample_times(0.0, 1.0), [0, 0.25, 0.5, 0.75, 1.0])


def test_hessian_forward_premise_at_kink(ball_grid):
    # V(0, .) = -(|x| + 1)^2 / 2 has a concave kink at the origin
    with pytest.raises(PremiseFailed, match="rho/2"):
        S.verify_hessian_propagation(ball_scenario(t0=0.0), ball_grid, "forward")


def test_forward_and_backward_seeds_agree(box_grid):
    sc = box_scenario()
    fwd = S.verify_hessian_propagation(sc, box_grid, "forward")
    bwd = S.verify_hessian_propagation(sc, box_grid, "backward")
    for a, b in zip(fwd.details["samples"], bwd.details["samples"]):
        assert a["t"] == pytest.approx(b["t"])
        # seeds differ by the grid Hessian error at t0 only
        assert np.abs(np.asarray(a["R"]) - np.asarray(b["R"])).max() <= box_grid.hessian_budget(2.0)
