"""End-to-end checks of the sensitivity relations along an optimal arc.

Every check integrates the characteristic arc of the scenario, evaluates a
theorem-specific premise, and then compares Riccati or costate data with
the grid oracle at a handful of sample times. A violated premise raises
:class:`PremiseFailed`; it is never reported as a failed conclusion.

The arc may start before the grid (the bundled conjugate scenario does);
forward checks then start at the first time both cover. The restriction of
an optimal arc is optimal for the sub-problem, so nothing is lost.
"""

from __future__ import annotations

import numpy as np

from .characteristics import DEFAULT_STEPS, Arc, integrate_characteristics
from .errors import ContaminatedRegion, DegenerateCostate, OutOfDomain, PremiseFailed
from .hamiltonian import ControlScenario, guard_radius
from .hjb.grid import GridValueFunction
from .hjb.jets import SUBJET, SUPERJET, JetCandidate, test_first_order, test_jet
from .report import FAIL, INCONCLUSIVE, PASS, VerificationReport
from .riccati import (
    BLOWUP,
    INITIAL,
    TERMINAL,
    detect_conjugate_time,
    integrate_riccati_direct,
    integrate_variational,
    opnorm,
    riccati_from_variational,
)

__all__ = [
    "VerificationReport",
    "DEFAULT_SAMPLE_TIMES",
    "verify_first_order_propagation",
    "verify_gradient_relation",
    "verify_subjet_propagation",
    "verify_superjet_propagation",
    "verify_hessian_propagation",
    "probe_c2_regularity",
]

DEFAULT_SAMPLE_TIMES = 5
# quotient P X^-1 against direct RK4 on the Riccati flow, relative to 1 + |R|
RICCATI_CROSSCHECK_TOL = 1e-8
# integration error allowance added to Hessian comparisons, relative to 1 + |R|
RICCATI_BUDGET = 1e-6
TUBE_CELLS = 8
# sample windows skip this share of (a, T] next to a blow-up frontier a
FRONTIER_GAP = 0.25


# ---------------------------------------------------------------------------
# helpers

def _arc(scenario, steps, arc=None) -> Arc:
    return integrate_characteristics(scenario, steps=steps) if arc is None else arc


def _start_time(arc: Arc, grid: GridValueFunction) -> float:
    t = max(arc.t0, float(grid.times[0]))
    if t >= arc.T:
        raise OutOfDomain("grid and arc share no time interval")
    return t


def _subarc(arc: Arc, t_start: float) -> Arc:
    """Nodes of ``arc`` from the last node at or before ``t_start``."""
    tol = 1e-12 * (1 + abs(t_start))
    i = max(int(np.searchsorted(arc.times, t_start + tol, side="right")) - 1, 0)
    if i == 0:
        return arc
    return Arc(arc.times[i:], arc.states[i:], arc.costates[i:], arc.direction, arc.lipschitz_c)


def sample_times(lo, hi, n=DEFAULT_SAMPLE_TIMES):
    return [float(t) for t in np.linspace(lo, hi, n)]


def _check_costate(arc: Arc):
    for t, p in zip(arc.times, arc.costates):
        if np.linalg.norm(p) < guard_radius(p):
            raise PremiseFailed(f"costate vanishes at t={t:.6g}; the relation needs p(t) != 0")


def _proximal_premise(grid, t0, x0, label, seed=0):
    premise = test_first_order(grid, t0, x0, grid.numerical_gradient(t0, x0), "prox_sub",
                               label=label, seed=seed)
    if not premise.passed:
        raise PremiseFailed(f"V(t0, .) shows no proximal subgradient at x0={x0}", premise)
    return premise


def _local_curvature(grid, t, x):
    try:
        return float(np.linalg.norm(grid.numerical_hessian(t, x), 2))
    except (ContaminatedRegion, OutOfDomain):
        return 1.0


def _jet_node(rep, t, jet):
    """Fold one jet test into ``rep`` as a (worst ratio, 1) node."""
    rows = jet.details["m_table"]
    ratio = max(n.residual / n.tolerance if n.tolerance > 0 else 0.0 for n in jet.nodes)
    rep.add(t, ratio if jet.verdict != INCONCLUSIVE else 0.0, 1.0, jet.check)
    rep.details.setdefault("jets", []).append(
        {"t": t, "verdict": jet.verdict, "kappa": jet.fitted_constants["kappa"],
         "m_table": rows, "q": jet.details["q"], "Q": jet.details["Q"]})


def _jet_verdict(rep, verdicts):
    if FAIL in verdicts or not all(n.ok for n in rep.nodes):
        return rep.finalize(FAIL)
    if INCONCLUSIVE in verdicts:
        rep.notes.append("at least one sample time could not be resolved on this grid")
        return rep.finalize(INCONCLUSIVE)
    return rep.finalize(PASS)


def _function_jet(f, x, q, Q, kind, r0=None, levels=8):
    """Direct dyadic remainder test of (q, Q) against a closed-form function."""
    x = np.asarray(x, dtype=float)
    sign = 1.0 if kind == SUBJET else -1.0
    r0 = 0.1 * (1.0 + float(np.linalg.norm(x))) if r0 is None else r0
    dirs = np.vstack([np.eye(x.size), -np.eye(x.size)])
    rng = np.random.default_rng(0)
    extra = rng.standard_normal((16, x.size))
    dirs = np.vstack([dirs, extra / np.linalg.norm(extra, axis=1, keepdims=True)])
    f0 = f(x)
    radii, ms = [], []
    for k in range(levels + 1):
        r = r0 * 2.0 ** -k
        vals = [sign * (f(x + r * d) - f0 - q @ (r * d) - 0.5 * r * r * d @ Q @ d) / r ** 2
                for d in dirs]
        radii.append(r)
        ms.append(min(vals))
    A = np.stack([np.ones(len(radii)), radii], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.array(ms), rcond=None)
    kappa = abs(float(coef[1]))
    noise = 1e-12 * (1 + abs(f0)) / radii[-1] ** 2
    ok = all(m >= -(kappa * r + noise + 1e-9) for r, m in zip(radii, ms))
    return ok, list(zip(radii, ms))


# ---------------------------------------------------------------------------
# first order

def verify_first_order_propagation(scenario: ControlScenario, grid: GridValueFunction,
                                   steps: int = DEFAULT_STEPS, n_times: int = DEFAULT_SAMPLE_TIMES,
                                   arc: Arc | None = None, seed: int = 0) -> VerificationReport:
    """-p(t) is a proximal subgradient of V(t, .) at x(t), with one c for all t.

    Premise: V(t0, .) has a proximal subgradient at x0, tested with the
    numerical gradient there, and the costate does not vanish. The arc's own
    -p is then checked at every sample time, t0 included, so a corrupted arc
    (say with the costate sign flipped) fails rather than failing the premise.
    """
    arc = _arc(scenario, steps, arc)
    t0 = _start_time(arc, grid)
    arc = _subarc(arc, t0)
    _check_costate(arc)
    _proximal_premise(grid, t0, arc.at(t0)[0], scenario.label, seed)

    rep = VerificationReport(label=scenario.label, check="first_order_propagation",
                             premise="proximal subdifferential of V(t0, .) at x0 is nonempty")
    cs = []
    for t in sample_times(t0, arc.T, n_times):
        x, p = arc.at(t)
        sub = test_first_order(grid, t, x, -p, "prox_sub", label=scenario.label, seed=seed)
        node = sub.nodes[0]
        rep.add(t, node.residual, node.tolerance, "proximal slope")
        cs.append(sub.fitted_constants["c_proximal"])
        rep.details.setdefault("tables", []).append({"t": t, "table": sub.details["table"]})
    rep.fitted_constants["c_proximal"] = max(cs)
    rep.fitted_constants["c_by_time"] = cs
    return rep.finalize()


def verify_gradient_relation(scenario: ControlScenario, grid: GridValueFunction,
                             steps: int = DEFAULT_STEPS, n_times: int = DEFAULT_SAMPLE_TIMES,
                             tol: float | None = None, exact_gradient=None,
                             exact_tol: float = 1e-8, arc: Arc | None = None,
                             seed: int = 0) -> VerificationReport:
    """grad_x V(t, x(t)) = -p(t) at sample times.

    Compared with the grid's numerical gradient within ``tol`` (default: the
    gradient budget at the local curvature) and, when ``exact_gradient(t, x)``
    is supplied, with that closed form within ``exact_tol``.
    """
    arc = _arc(scenario, steps, arc)
    t0 = _start_time(arc, grid)
    _check_costate(_subarc(arc, t0))
    _proximal_premise(grid, t0, arc.at(t0)[0], scenario.label, seed)
    rep = VerificationReport(label=scenario.label, check="gradient_relation",
                             premise="nonvanishing costate; proximal subgradient at (t0, x0)")
    for t in sample_times(t0, arc.T, n_times):
        x, p = arc.at(t)
        g = grid.numerical_gradient(t, x)
        budget = grid.gradient_budget(_local_curvature(grid, t, x)) if tol is None else tol
        rep.add(t, float(np.linalg.norm(g + p)), budget, "grid")
        if exact_gradient is not None:
            ge = np.asarray(exact_gradient(t, x), dtype=float)
            rep.add(t, float(np.linalg.norm(ge + p)), exact_tol, "closed form")
    return rep.finalize()


# ---------------------------------------------------------------------------
# second order: jets

def verify_subjet_propagation(scenario: ControlScenario, grid: GridValueFunction, R0,
                              steps: int = DEFAULT_STEPS, n_times: int = DEFAULT_SAMPLE_TIMES,
                              arc: Arc | None = None, seed: int = 0) -> VerificationReport:
    """(-p(t), -R(t)) is a subjet of V(t, .) at x(t), R forward from R(t0) = R0.

    Premise: (-p(t0), -R0) passes the subjet test at (t0, x0). When the cost is
    flagged semiconcave the forward Riccati solution must reach T.
    """
    arc = _arc(scenario, steps, arc)
    t0 = _start_time(arc, grid)
    arc = _subarc(arc, t0)
    _check_costate(arc)
    R0 = np.atleast_2d(np.asarray(R0, dtype=float))
    x0, p0 = arc.at(t0)
    premise = test_jet(grid, JetCandidate(t0, x0, -p0, -R0, SUBJET), label=scenario.label,
                       seed=seed)
    if not premise.passed:
        raise PremiseFailed(f"(-p(t0), -R0) is not a subjet of V(t0, .) at x0 "
                            f"(verdict {premise.verdict})", premise)

    sol = integrate_riccati_direct(arc, scenario.model, R0, anchor=INITIAL)
    rep = VerificationReport(label=scenario.label, check="subjet_propagation",
                             premise="(-p(t0), -R0) passes the subjet test at (t0, x0)")
    a = arc.T if sol.status != BLOWUP else sol.t_star
    rep.fitted_constants.update(riccati_status=sol.status, frontier=a)
    if scenario.cost.semiconcave and sol.status == BLOWUP:
        rep.add(a, arc.T - a, 0.0, "semiconcave cost: Riccati must reach T")
    hi = a if sol.status != BLOWUP else t0 + (1 - FRONTIER_GAP) * (a - t0)
    verdicts = []
    for t in sample_times(t0, hi, n_times):
        x, p = arc.at(t)
        jet = test_jet(grid, JetCandidate(t, x, -p, -sol.at(t), SUBJET),
                       label=scenario.label, seed=seed)
        verdicts.append(jet.verdict)
        _jet_node(rep, t, jet)
    return _jet_verdict(rep, verdicts)


def verify_superjet_propagation(scenario: ControlScenario, grid: GridValueFunction, Qjet,
                                steps: int = DEFAULT_STEPS, n_times: int = DEFAULT_SAMPLE_TIMES,
                                arc: Arc | None = None, seed: int = 0) -> VerificationReport:
    """(-p(t), -R(t)) is a superjet of V(t, .) at x(t), R backward from R(T) = -Qjet.

    Premise: grad phi(z) != 0 and (grad phi(z), Qjet) is a superjet of phi at the
    terminal state z, checked by a direct remainder test on phi. The report
    carries the blow-up frontier a of the backward Riccati flow and the first
    conjugate time of the matching variational system; sample times lie in
    (a, T], starting a quarter of the way in.
    """
    arc = _arc(scenario, steps, arc)
    z = arc.states[-1]
    q = np.asarray(scenario.cost.grad(z), dtype=float)
    Qjet = np.atleast_2d(np.asarray(Qjet, dtype=float))
    if np.linalg.norm(q) < guard_radius(q):
        raise PremiseFailed(f"grad phi vanishes at the terminal state {z}")
    ok, table = _function_jet(scenario.cost.value, z, q, Qjet, SUPERJET)
    if not ok:
        pre = VerificationReport(label=scenario.label, check="superjet_premise",
                                 details={"m_table": table})
        raise PremiseFailed("(grad phi(z), Qjet) is not a superjet of phi", pre.finalize(FAIL))

    sol = integrate_riccati_direct(arc, scenario.model, -Qjet, anchor=TERMINAL)
    conj = detect_conjugate_time(integrate_variational(arc, scenario.model, Qjet, TERMINAL))
    rep = VerificationReport(label=scenario.label, check="superjet_propagation",
                             premise="(grad phi, Qjet) is a superjet of phi at x(T)")
    a = sol.t_star if sol.status == BLOWUP else None
    rep.fitted_constants.update(riccati_status=sol.status, frontier=a, conjugate_time=conj.t_c)
    lo = max(float(grid.times[0]), arc.t0)
    if a is not None:
        lo = max(lo, a + FRONTIER_GAP * (arc.T - a))
    verdicts = []
    for t in sample_times(lo, arc.T, n_times):
        x, p = arc.at(t)
        jet = test_jet(grid, JetCandidate(t, x, -p, -sol.at(t), SUPERJET),
                       label=scenario.label, seed=seed)
        verdicts.append(jet.verdict)
        _jet_node(rep, t, jet)
    return _jet_verdict(rep, verdicts)


# ---------------------------------------------------------------------------
# second order: Hessians

def verify_hessian_propagation(scenario: ControlScenario, grid: GridValueFunction,
                               direction: str = "backward", steps: int = DEFAULT_STEPS,
                               n_times: int = DEFAULT_SAMPLE_TIMES, arc: Arc | None = None,
                               window=None, relative_tol: float | None = None) -> VerificationReport:
    """R(t) = -Hess_x V(t, x(t)) along the arc.

    ``forward`` seeds R at the start with minus the grid Hessian there, once
    the Hessians at the default step and at half of it agree within twice
    the budget;
    ``backward`` seeds R(T) = -Hess phi(x(T)) and needs grad phi(x(T)) != 0
    and a twice differentiable cost. Each sample compares R with minus the
    grid Hessian (tolerance: Hessian budget plus a Riccati integration
    allowance). With ``relative_tol`` the residual is |R + H| / (1 + |R|)
    and the tolerance is ``relative_tol`` instead. The
    quotient P X^-1 of the variational system with the same seed must match
    the direct solution within 1e-8 (1 + |R|) at every node.
    ``window = (lo, hi)`` restricts the sample times.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    arc = _arc(scenario, steps, arc)
    t_start = _start_time(arc, grid)
    model = scenario.model
    if direction == "forward":
        arc = _subarc(arc, t_start)
        x0, _ = arc.at(arc.t0)
        H0 = grid.numerical_hessian(arc.t0, x0)
        # twice differentiable at x0, as a falsifiable surrogate: steps rho and rho/2 agree
        half = grid.stencil / 2
        H_half = grid.numerical_hessian(arc.t0, x0, step=half)
        gap = opnorm(H0 - H_half)
        # curvature read at the default step, as elsewhere; a kink must not widen its own budget
        budget = 2 * grid.hessian_budget(max(opnorm(H0), 1.0), step=half)
        if not gap <= budget:
            raise PremiseFailed(
                f"grid Hessians at steps rho and rho/2 differ by {gap:.3g} > {budget:.3g} at "
                f"(t0, x0); V(t0, .) does not look twice differentiable there")
        sol = integrate_riccati_direct(arc, model, -H0, anchor=INITIAL)
        vs = integrate_variational(arc, model, anchor=INITIAL, initial_hessian=H0)
        premise = "grid Hessians at steps rho and rho/2 agree at (t0, x0)"
    else:
        z = arc.states[-1]
        g = np.asarray(scenario.cost.grad(z), dtype=float)
        if np.linalg.norm(g) < guard_radius(g):
            raise PremiseFailed(f"grad phi vanishes at the terminal state {z}")
        if scenario.cost.regularity not in ("C2", "C2_m"):
            raise PremiseFailed("the terminal cost is not twice differentiable")
        H_T = np.atleast_2d(scenario.cost.hess(z))
        sol = integrate_riccati_direct(arc, model, -H_T, anchor=TERMINAL)
        vs = integrate_variational(arc, model, H_T, TERMINAL)
        premise = "phi twice differentiable at x(T) with nonzero gradient"
    quot = riccati_from_variational(vs)

    rep = VerificationReport(label=scenario.label, check=f"hessian_propagation_{direction}",
                             premise=premise)
    rep.fitted_constants.update(riccati_status=sol.status, t_star=sol.t_star)
    lo, hi = max(t_start, float(sol.times[0])), float(sol.times[-1])
    if sol.status == BLOWUP:
        if direction == "backward":
            lo = max(lo, sol.t_star + FRONTIER_GAP * (arc.T - sol.t_star))
        else:
            hi = min(hi, sol.t_star - FRONTIER_GAP * (sol.t_star - arc.t0))
    if window is not None:
        lo, hi = max(lo, window[0]), min(hi, window[1])

    # near a blow-up both solutions lose relative accuracy: compare on [lo, hi]
    qmap = {float(t): r for t, r in zip(quot.times, quot.R)}
    worst = 0.0
    for t, r in zip(sol.times, sol.R):
        rq = qmap.get(float(t))
        if rq is not None and lo - 1e-12 <= t <= hi + 1e-12:
            worst = max(worst, opnorm(r - rq) / (1 + opnorm(r)))
    rep.add(None, worst, RICCATI_CROSSCHECK_TOL, "quotient vs direct")
    rep.fitted_constants["quotient_vs_direct"] = worst

    rows = []
    for t in sample_times(lo, hi, n_times):
        x, _ = arc.at(t)
        Hg = grid.numerical_hessian(t, x)
        R = sol.at(t)
        scale = 1 + opnorm(R)
        err = opnorm(R + Hg)
        tol = grid.hessian_budget(max(opnorm(R), 1.0)) + RICCATI_BUDGET * scale
        if relative_tol is not None:
            err, tol = err / scale, float(relative_tol)
        rep.add(t, err, tol, "R vs -grid Hessian")
        rows.append({"t": t, "R": R, "grid_hessian": Hg})
    rep.details["samples"] = rows
    return rep.finalize()


def probe_c2_regularity(scenario: ControlScenario, grid: GridValueFunction,
                        steps: int = DEFAULT_STEPS, n_times: int = DEFAULT_SAMPLE_TIMES,
                        tube_cells: int = TUBE_CELLS, seed: int = 0) -> VerificationReport:
    """No conjugate time on [t0, T] and a continuous grid Hessian on a tube around the arc.

    Premise: V(t0, .) has a proximal subgradient q at x0 with q != 0, and the
    optimal arc ends where grad phi != 0. The probe refuses when the zero
    vector passes the proximal test within the grid's L-infinity budget:
    then no nonzero q is certified, and V may fail to be twice
    differentiable there.
    """
    t0 = max(scenario.t0, float(grid.times[0]))
    x0 = scenario.x0 if t0 == scenario.t0 else None
    if x0 is None:
        arc0 = integrate_characteristics(scenario, steps=steps)
        x0, _ = arc0.at(t0)
    # judged against the full L-infinity budget: a kink is smoothed by the scheme
    zero = test_first_order(grid, t0, x0, np.zeros_like(x0), "prox_sub",
                            noise=grid.error_budget, label=scenario.label, seed=seed)
    if zero.passed:
        raise PremiseFailed(
            "q = 0 cannot be excluded as the proximal subgradient of V(t0, .) at x0; "
            "the regularity statement excludes q = 0, and V need not be twice "
            "differentiable there", zero)
    q = grid.numerical_gradient(t0, x0)
    premise = test_first_order(grid, t0, x0, q, "prox_sub", label=scenario.label, seed=seed)
    if not premise.passed:
        raise PremiseFailed("V(t0, .) shows no proximal subgradient at x0", premise)
    try:
        arc = _subarc(integrate_characteristics(scenario, steps=steps), t0)
    except DegenerateCostate as exc:
        raise PremiseFailed(f"grad phi vanishes at the end of the optimal arc: {exc}") from exc
    z = arc.states[-1]
    H_T = np.atleast_2d(scenario.cost.hess(z))
    conj = detect_conjugate_time(integrate_variational(arc, scenario.model, H_T, TERMINAL))

    rep = VerificationReport(label=scenario.label, check="c2_regularity",
                             premise="nonzero proximal subgradient at (t0, x0); grad phi(x(T)) != 0")
    rep.add(None, 0.0 if conj.t_c is None else 1.0, 0.0, "conjugate time in [t0, T]")
    rep.fitted_constants["conjugate_time"] = conj.t_c

    h = float(np.max(grid.spacing))
    offsets = np.arange(-tube_cells, tube_cells + 1) * h
    worst_jump = 0.0
    for t in sample_times(t0, arc.T, n_times):
        x, _ = arc.at(t)
        jump = 0.0
        for axis in range(x.size):
            e = np.zeros(x.size)
            e[axis] = 1.0
            Hs = [grid.numerical_hessian(t, x + s * e) for s in offsets]
            # second differences: blind to smooth (linear) drift, not to a step
            jump = max(jump, max(opnorm(a - 2 * b + c) for a, b, c in zip(Hs, Hs[1:], Hs[2:])))
        budget = grid.hessian_budget(_local_curvature(grid, t, x))
        rep.add(t, jump, budget, "tube Hessian jump")
        worst_jump = max(worst_jump, jump)
    rep.fitted_constants["max_tube_jump"] = worst_jump
    return rep.finalize()
