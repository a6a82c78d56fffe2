"""Shared scenarios, closed forms and cached grid solves."""

import numpy as np
import pytest

from mayer_sens.hamiltonian import (
    ControlScenario,
    make_ball_model,
    make_interval_box_model,
    quadratic_cost,
)
from mayer_sens.hjb import GridSpec, solve_value_function


def box_scenario(x0=2.0, t0=0.0, T=1.0, A=2.0, terminal_state=None, semiconcave=True):
    """F = [-1, 1], phi(z) = (A/2) z^2; A = 2 gives phi = z^2."""
    ts = None if terminal_state is None else [terminal_state]
    return ControlScenario(make_interval_box_model(1, 1.0),
                           quadratic_cost([[A]], semiconcave=semiconcave),
                           t0, T, [x0], label="box1d", terminal_state=ts)


def ball_scenario(t0=-0.5, T=1.0, angle=0.0, x0_scale=None):
    """F = unit ball in R^2, phi(z) = -|z|^2/2, arc ending at (cos a, sin a)."""
    z = np.array([np.cos(angle), np.sin(angle)])
    x0 = (t0 - T + 1.0) * z if x0_scale is None else x0_scale * z
    return ControlScenario(make_ball_model(2, 1.0), quadratic_cost(-np.eye(2)),
                           t0, T, x0, label="ball2d", terminal_state=z)


def V_box(t, x, T=1.0):
    """Closed-form value of the box scenario with phi = z^2."""
    s = T - t
    if x >= s:
        return (x - s) ** 2
    if x <= -s:
        return (x + s) ** 2
    return 0.0


def V_ball(t, x, T=1.0):
    return -0.5 * (np.linalg.norm(x) + T - t) ** 2


BOX_SPEC = GridSpec(1, (-3.0,), (3.0,), 401, 400, 0.0, 1.0)
BALL_SPEC = GridSpec(2, (-2.5, -2.5), (2.5, 2.5), 201, 200, 0.0, 1.0)


@pytest.fixture(scope="session")
def box_grid():
    return solve_value_function(box_scenario(), BOX_SPEC, 2)


@pytest.fixture(scope="session")
def ball_grid():
    return solve_value_function(ball_scenario(), BALL_SPEC, 64)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.LINES:
            terminalreporter.write_line(line)
