import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import V_box, ball_scenario, box_scenario
from mayer_sens.characteristics import (
    dynamic_programming_monotonicity,
    integrate_characteristics,
    integrate_flow_from_initial,
    maximum_principle_residual,
    read_arc_csv,
    shoot_terminal_state,
    write_arc_csv,
)
from mayer_sens.errors import DegenerateCostate, OutOfDomain
from mayer_sens.hamiltonian import ControlScenario, make_affine_control_model, quadratic_cost


def pendulum_scenario(z):
    model = make_affine_control_model(lambda x: np.array([x[1], -np.sin(x[0])]),
                                      lambda x: np.eye(2), 2, 2)
    return ControlScenario(model, quadratic_cost(np.eye(2)), 0.0, 1.0, np.zeros(2),
                           terminal_state=z)


def test_box_backward_closed_form():
    arc = integrate_characteristics(box_scenario(terminal_state=1.0), steps=200)
    np.testing.assert_allclose(arc.states[:, 0], 2.0 - arc.times, atol=1e-12)
    np.testing.assert_allclose(arc.costates[:, 0], -2.0, atol=1e-12)
    assert maximum_principle_residual(arc, box_scenario().model) <= 1e-10


def test_degenerate_terminal_state():
    with pytest.raises(DegenerateCostate):
        integrate_characteristics(box_scenario(terminal_state=0.0))


def test_ball_backward_closed_form():
    sc = ball_scenario(t0=0.0)
    arc = integrate_characteristics(sc, steps=100)
    np.testing.assert_allclose(arc.states, np.stack([arc.times, 0 * arc.times], 1), atol=1e-12)
    np.testing.assert_allclose(arc.costates, np.tile([1.0, 0.0], (101, 1)), atol=1e-12)
    assert maximum_principle_residual(arc, sc.model) <= 1e-10


def test_forward_flow():
    arc = integrate_flow_from_initial(box_scenario(), [2.0], [-2.0], steps=100)
    assert arc.states[-1, 0] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DegenerateCostate):
        integrate_flow_from_initial(box_scenario(), [2.0], [0.0])
    arc = integrate_flow_from_initial(ball_scenario(t0=0.0), [0.0, 0.0], [1.0, 0.0], steps=100)
    np.testing.assert_allclose(arc.states[-1], [1.0, 0.0], atol=1e-12)


def test_shooting_recovers_terminal_state():
    z = shoot_terminal_state(box_scenario(x0=2.0))
    np.testing.assert_allclose(z, [1.0], atol=1e-10)


def test_arc_query_outside_range():
    arc = integrate_characteristics(box_scenario(terminal_state=1.0), steps=10)
    with pytest.raises(OutOfDomain):
        arc.at(1.5)


def test_csv_round_trip(tmp_path):
    arc = integrate_characteristics(ball_scenario(t0=0.0), steps=20)
    write_arc_csv(arc, tmp_path / "arc.csv")
    back = read_arc_csv(tmp_path / "arc.csv")
    np.testing.assert_array_equal(back.states, arc.states)
    np.testing.assert_array_equal(back.costates, arc.costates)


def test_invariants_report():
    inv = integrate_characteristics(box_scenario(terminal_state=1.0), steps=50).check_invariants()
    assert inv["dichotomy"] and inv["gronwall"]
    assert inv["costate_ratio"] == pytest.approx(1.0)


# --- dynamic programming monotonicity -----------------------------------------------

def test_optimal_arc_is_constant_under_exact_value():
    arc = integrate_characteristics(box_scenario(terminal_state=1.0), steps=100)
    rep = dynamic_programming_monotonicity(lambda t, x: V_box(t, x[0]), arc)
    assert rep.passed
    assert rep.fitted_constants["max_decrease"] <= 1e-12
    assert rep.fitted_constants["constant_along_arc"]


def test_stationary_arc_is_nondecreasing():
    times = np.linspace(0, 1, 51)
    states = np.full((51, 1), 2.0)
    rep = dynamic_programming_monotonicity(lambda t, x: V_box(t, x[0]), _Path(times, states))
    assert rep.passed
    assert rep.fitted_constants["total_increase"] > 0


def test_zigzag_arc_strictly_increases():
    times = np.linspace(0, 1, 201)
    # speed 1, reversing every 0.1 time units; admissible for F = [-1, 1]
    vel = np.where((times // 0.1) % 2 == 0, -1.0, 1.0)
    states = 2.0 + np.concatenate([[0.0], np.cumsum(vel[:-1] * np.diff(times))])
    vals = np.array([V_box(t, x) for t, x in zip(times, states)])
    rep = dynamic_programming_monotonicity(lambda t, x: V_box(t, x[0]),
                                           _Path(times, states[:, None]))
    assert rep.passed
    assert rep.fitted_constants["total_increase"] > 0.5
    assert np.all(np.diff(vals) >= -1e-12) and vals[-1] > vals[0]


def test_monotonicity_on_grid(box_grid):
    arc = integrate_characteristics(box_scenario(terminal_state=1.0), steps=100)
    assert dynamic_programming_monotonicity(box_grid, arc).passed


class _Path:
    def __init__(self, times, states):
        self.times, self.states = times, states


# --- properties -------------------------------------------------------------------

terminal = st.tuples(st.floats(-2, 2), st.floats(-2, 2)).filter(
    lambda z: np.hypot(*z) > 0.1).map(np.array)


@settings(max_examples=100, deadline=None)
@given(z=terminal)
def test_pendulum_arc_invariants(z):
    sc = pendulum_scenario(z)
    arc = integrate_characteristics(sc, steps=100)
    inv = arc.check_invariants()
    assert inv["dichotomy"] and inv["gronwall"]
    assert maximum_principle_residual(arc, sc.model) <= 1e-8 + 10 * arc.dt ** 2
