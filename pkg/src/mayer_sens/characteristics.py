"""Characteristic (state/costate) arcs of x' = grad_p H, -p' = grad_x H."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DegenerateCostate, NonsmoothPoint, OutOfDomain
from .hamiltonian import ControlScenario, HamiltonianModel, guard_radius
from .ode import rk4, rk4_backward
from .report import VerificationReport

DEFAULT_STEPS = 1000

FORWARD = "forward_from_t0"
BACKWARD = "backward_from_T"


@dataclass(frozen=True)
class Arc:
    times: np.ndarray
    states: np.ndarray
    costates: np.ndarray
    direction: str
    # local Lipschitz constant c_r of x -> H(x, p)/|p| along the arc
    lipschitz_c: float = 0.0

    def __post_init__(self):
        n = len(self.times)
        if n < 2 or len(self.states) != n or len(self.costates) != n:
            raise ValueError("arc needs >= 2 nodes and matching lengths")
        if self.direction not in (FORWARD, BACKWARD):
            raise ValueError(f"bad direction {self.direction!r}")

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def T(self):
        return float(self.times[-1])

    def at(self, t):
        """(x(t), p(t)) by linear interpolation between nodes."""
        ts = self.times
        if t < ts[0] - 1e-12 * (1 + abs(ts[0])) or t > ts[-1] + 1e-12 * (1 + abs(ts[-1])):
            raise OutOfDomain(f"t={t} outside arc [{ts[0]}, {ts[-1]}]")
        i = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2))
        a = (t - ts[i]) / (ts[i + 1] - ts[i])
        a = min(max(a, 0.0), 1.0)
        x = (1 - a) * self.states[i] + a * self.states[i + 1]
        p = (1 - a) * self.costates[i] + a * self.costates[i + 1]
        return x, p

    def costate_norms(self):
        return np.linalg.norm(self.costates, axis=1)

    def check_invariants(self) -> dict:
        """Dual-arc dichotomy and the Gronwall ratio bound."""
        norms = self.costate_norms()
        all_zero = bool(np.all(norms == 0))
        nonvanishing = bool(np.all(norms > 0))
        horizon = self.T - self.t0
        if nonvanishing:
            ratio = float(norms.max() / norms.min())
            bound = float(np.exp(self.lipschitz_c * horizon))
        else:
            ratio, bound = float("inf"), float("nan")
        return {
            "dichotomy": all_zero or nonvanishing,
            "gronwall": all_zero or ratio <= bound * (1 + 1e-9),
            "costate_ratio": ratio,
            "gronwall_bound": bound,
        }


def _char_rhs(model: HamiltonianModel):
    n = model.dim

    def f(t, y):
        x, p = y[:n], y[n:]
        if np.linalg.norm(p) < guard_radius(p):
            raise NonsmoothPoint(f"costate entered the guard cone at t={t}")
        return np.concatenate([model.grad_p(x, p), -model.grad_x(x, p)])

    return f


def _lipschitz_estimate(model, states, costates):
    c = 0.0
    for x, p in zip(states, costates):
        pn = np.linalg.norm(p)
        if pn > 0:
            c = max(c, float(np.linalg.norm(model.grad_x(x, p)) / pn))
    return c


def _times(t0, T, steps):
    if steps < 2:
        raise ValueError("steps must be >= 2")
    return np.linspace(t0, T, steps + 1)


def integrate_characteristics(scenario: ControlScenario, terminal_state=None,
                              steps: int = DEFAULT_STEPS) -> Arc:
    """Solve the characteristic system backward from x(T) = z, p(T) = -grad phi(z)."""
    model = scenario.model
    if terminal_state is None:
        terminal_state = scenario.terminal_state
    if terminal_state is None:
        terminal_state = shoot_terminal_state(scenario, steps=steps)
    z = np.atleast_1d(np.asarray(terminal_state, dtype=float))
    pT = -np.asarray(scenario.cost.grad(z), dtype=float)
    if np.linalg.norm(pT) < guard_radius(pT):
        raise DegenerateCostate(f"grad phi vanishes at terminal state {z}")
    times = _times(scenario.t0, scenario.T, steps)
    y = rk4_backward(_char_rhs(model), np.concatenate([z, pT]), times)
    n = model.dim
    states, costates = y[:, :n].copy(), y[:, n:].copy()
    return Arc(times, states, costates, BACKWARD, _lipschitz_estimate(model, states, costates))


def integrate_flow_from_initial(scenario: ControlScenario, y0, p0,
                                steps: int = DEFAULT_STEPS, t0=None) -> Arc:
    """Solve the same system forward from (y0, p0) at t0 (default scenario.t0)."""
    model = scenario.model
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    if np.linalg.norm(p0) < guard_radius(p0):
        raise DegenerateCostate("initial costate lies in the guard cone")
    times = _times(scenario.t0 if t0 is None else t0, scenario.T, steps)
    y = rk4(_char_rhs(model), np.concatenate([y0, p0]), times)
    n = model.dim
    states, costates = y[:, :n].copy(), y[:, n:].copy()
    return Arc(times, states, costates, FORWARD, _lipschitz_estimate(model, states, costates))


def shoot_terminal_state(scenario: ControlScenario, x0=None, t0=None,
                         steps: int = DEFAULT_STEPS, tol: float = 1e-12):
    """Find z such that the backward characteristic from z passes through x0 at t0.

    The initial guess takes one explicit Euler step of the state equation with
    costate -grad phi(x0). With several characteristics through x0 the one found
    depends on that guess; scenarios with a known answer should set
    ``terminal_state`` explicitly.
    """
    model = scenario.model
    x0 = scenario.x0 if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    t0 = scenario.t0 if t0 is None else float(t0)
    T = scenario.T
    p_guess = -np.asarray(scenario.cost.grad(x0), dtype=float)
    z0 = x0.copy()
    if np.linalg.norm(p_guess) >= guard_radius(p_guess):
        try:
            z0 = x0 + (T - t0) * model.grad_p(x0, p_guess)
        except NonsmoothPoint:
            pass
    times = _times(t0, T, steps)
    n = model.dim
    f = _char_rhs(model)

    def residual(z):
        pT = -np.asarray(scenario.cost.grad(z), dtype=float)
        if np.linalg.norm(pT) < guard_radius(pT):
            raise DegenerateCostate(f"grad phi vanishes at trial terminal state {z}")
        y = rk4_backward(f, np.concatenate([z, pT]), times)
        return y[0, :n] - x0

    sol = optimize.root(residual, z0, method="hybr", tol=tol)
    if not sol.success or np.linalg.norm(residual(sol.x)) > 1e-8 * (1 + np.linalg.norm(x0)):
        raise DegenerateCostate(f"shooting for the terminal state failed: {sol.message}")
    return sol.x


def maximum_principle_residual(arc: Arc, model: HamiltonianModel) -> float:
    """max |H(x_i, p_i) - <p_i, xdot_i>| over interior nodes, xdot by central differences."""
    norms = arc.costate_norms()
    if np.any(norms == 0):
        raise DegenerateCostate("maximum principle residual needs a nonvanishing costate")
    ts, xs, ps = arc.times, arc.states, arc.costates
    xdot = (xs[2:] - xs[:-2]) / (ts[2:] - ts[:-2])[:, None]
    res = [abs(model.eval(x, p) - p @ v) for x, p, v in zip(xs[1:-1], ps[1:-1], xdot)]
    return float(max(res)) if res else 0.0


def flow_lipschitz_estimate(model: HamiltonianModel, arc: Arc, delta: float = 1e-6) -> float:
    """Empirical k with |y(s; zeta) - y(s; z)| <= e^{k(s-t)} |z - zeta| along the arc's costate.

    Only an estimate from paired integrations; nothing here certifies a constant.
    """
    zeta = arc.states[0]
    n = model.dim

    def f(t, y):
        _, p = arc.at(t)
        return model.grad_p(y, p)

    base = rk4(f, zeta, arc.times)
    s = arc.times - arc.t0
    k = 0.0
    for i in range(n):
        e = np.zeros(n)
        e[i] = delta
        pert = rk4(f, zeta + e, arc.times)
        growth = np.linalg.norm(pert - base, axis=1) / delta
        with np.errstate(divide="ignore", invalid="ignore"):
            rates = np.where(s > 0, np.log(np.maximum(growth, 1e-300)) / s, 0.0)
        k = max(k, float(np.max(rates)))
    return max(k, 0.0)


def dynamic_programming_monotonicity(value, arc, budget=None,
                                     label="scenario") -> VerificationReport:
    """Check that s -> V(s, y(s)) never decreases along an admissible arc.

    ``value`` is a :class:`~mayer_sens.hjb.GridValueFunction` or a callable
    ``V(t, x)``. A decrease counts as a violation only beyond ``budget``
    (default: twice the grid value budget, or 1e-12 relative for exact V).
    ``arc`` is anything with ``times`` and ``states``.
    """
    times = np.asarray(arc.times, dtype=float)
    states = np.atleast_2d(np.asarray(arc.states, dtype=float))
    if states.shape[0] != times.size:
        states = states.T
    if hasattr(value, "interpolate"):
        evaluate = value.interpolate
        tol = 2.0 * value.error_budget if budget is None else budget
    else:
        evaluate = value
        tol = budget
    vals = np.array([evaluate(t, x) for t, x in zip(times, states)])
    if tol is None:
        tol = 1e-12 * (1 + float(np.max(np.abs(vals))))
    rep = VerificationReport(label=label, check="dynamic_programming_monotonicity",
                             premise="admissible arc inside the value domain")
    drops = np.maximum.accumulate(vals) - vals
    for t, d in zip(times, drops):
        rep.add(t, d, tol, "decrease_from_running_max")
    rise = float(vals[-1] - vals[0])
    rep.fitted_constants.update(
        max_decrease=float(drops.max()),
        total_increase=rise,
        constant_along_arc=bool(np.max(np.abs(vals - vals[0])) <= tol),
    )
    return rep.finalize()


def write_arc_csv(arc: Arc, path) -> None:
    n = arc.dim
    header = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"p_{i + 1}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, x, p in zip(arc.times, arc.states, arc.costates):
            w.writerow([f"{v:.17g}" for v in (t, *x, *p)])


def read_arc_csv(path, direction=BACKWARD) -> Arc:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    n = (len(header) - 1) // 2
    return Arc(body[:, 0], body[:, 1:1 + n], body[:, 1 + n:], direction)
