"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary.
"""

import contextlib
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import BOX_SPEC, V_box, ball_scenario, box_scenario
from mayer_sens import cli
from mayer_sens import sensitivity as S
from mayer_sens.characteristics import integrate_characteristics, maximum_principle_residual
from mayer_sens.errors import PremiseFailed
from mayer_sens.hamiltonian import ControlScenario, TerminalCost
from mayer_sens.hjb import GridSpec, JetCandidate, jets, solve_value_function
from mayer_sens.riccati import (
    INITIAL,
    TERMINAL,
    comparison_bound,
    detect_conjugate_time,
    integrate_riccati_direct,
    integrate_variational,
)
from mayer_sens.scenario_io import BUNDLED_DIR, bundled_scenarios, load_scenario

LINES = []


@contextlib.contextmanager
def criterion(n, text):
    try:
        yield
    except BaseException as exc:
        line = f"[FAIL] criterion {n}: {text} ({type(exc).__name__})"
        LINES.append(line)
        print(line)
        raise
    line = f"[PASS] criterion {n}: {text}"
    LINES.append(line)
    print(line)


def box_linf(grid, stride_x=1, stride_t=1, mask=None):
    """Worst |V_grid - V| over clean nodes, optionally on a subsampled lattice."""
    xs = np.linspace(-3.0, 3.0, grid.values.shape[1])[::stride_x]
    worst = 0.0
    for j, k in enumerate(range(0, len(grid.times), stride_t)):
        t = grid.times[k]
        err = np.abs(grid.values[k][::stride_x] - np.array([V_box(t, x) for x in xs]))
        keep = ~grid.contaminated[k][::stride_x] if mask is None else mask[j]
        worst = max(worst, float(err[keep].max()))
    return worst


# --- 1: closed-form value function ---------------------------------------------------

def test_criterion_1_closed_form_value(box_grid):
    with criterion(1, "1-D value L-inf <= 2e-2, refinement ratio >= 1.7"):
        fine = box_grid
        assert box_linf(fine) <= 2e-2
        coarse = solve_value_function(box_scenario(),
                                      GridSpec(1, (-3.0,), (3.0,), 201, 200, 0.0, 1.0), 2)
        # compare on the coarse lattice, where both solves are clean
        mask = [~coarse.contaminated[k] & ~fine.contaminated[2 * k][::2]
                for k in range(len(coarse.times))]
        e_coarse = box_linf(coarse, mask=mask)
        e_fine = box_linf(fine, 2, 2, mask)
        print(f"    L-inf {e_coarse:.4g} -> {e_fine:.4g}, ratio {e_coarse / e_fine:.3g}")
        assert e_coarse / e_fine >= 1.7


# --- 2: gradient relation ---------------------------------------------------------------

def test_criterion_2_gradient_relation(box_grid):
    with criterion(2, "|grad V + p| <= 5e-2 at 5 times, closed form <= 1e-8"):
        exact = lambda t, x: np.array([2.0 * (x[0] + t - 1.0)])
        rep = S.verify_gradient_relation(box_scenario(), box_grid, exact_gradient=exact)
        grid_nodes = [n for n in rep.nodes if n.label == "grid"]
        exact_nodes = [n for n in rep.nodes if n.label == "closed form"]
        assert len(grid_nodes) == 5 and len(exact_nodes) == 5
        assert max(n.residual for n in grid_nodes) <= 5e-2
        assert max(n.residual for n in exact_nodes) <= 1e-8
        assert rep.passed


# --- 3: Hessian propagation ----------------------------------------------------------------

def test_criterion_3_hessian_propagation(box_grid):
    with criterion(3, "R = -2 vs grid Hessian within 1e-1, quotient vs direct <= 1e-8"):
        sc = box_scenario()
        for direction in ("forward", "backward"):
            rep = S.verify_hessian_propagation(sc, box_grid, direction)
            hess = [n for n in rep.nodes if n.label == "R vs -grid Hessian"]
            assert len(hess) == 5
            assert max(n.residual for n in hess) <= 1e-1
            assert rep.fitted_constants["quotient_vs_direct"] <= 1e-8
            assert rep.passed
        arc = integrate_characteristics(sc, steps=S.DEFAULT_STEPS)
        sol = integrate_riccati_direct(arc, sc.model, [[-2.0]])
        np.testing.assert_allclose(sol.R[:, 0, 0], -2.0, atol=1e-12)


# --- 4: conjugate time ------------------------------------------------------------------------

def test_criterion_4_conjugate_time():
    with criterion(4, "t_c in [-1e-3, 1e-3], R22 = 1/(t-T+1) to 1e-6, blow-up within 5 dt"):
        sc = ball_scenario(t0=-0.5)
        arc = integrate_characteristics(sc, steps=S.DEFAULT_STEPS)
        t_c = detect_conjugate_time(integrate_variational(arc, sc.model, -np.eye(2))).t_c
        assert t_c is not None and -1e-3 <= t_c <= 1e-3
        sol = integrate_riccati_direct(arc, sc.model, np.eye(2))
        ok = sol.times >= t_c + 0.05
        assert ok.sum() > 10
        np.testing.assert_allclose(sol.R[ok, 1, 1], 1.0 / (sol.times[ok] - sc.T + 1), rtol=1e-6)
        print(f"    t_c = {t_c:.3g}, blow-up at {sol.t_star:.4g}, dt = {arc.dt:.3g}")
        assert abs(sol.t_star - t_c) <= 5 * arc.dt


# --- 5: comparison bound ----------------------------------------------------------------------

def test_criterion_5_comparison_bound():
    with criterion(5, "min-eig(R - Q) >= -1e-8 on the bundled scenarios"):
        for path in bundled_scenarios():
            sc = load_scenario(path).scenario
            arc = integrate_characteristics(sc, steps=S.DEFAULT_STEPS)
            rep = comparison_bound(arc, sc.model, -sc.cost.hess(arc.states[-1]), label=sc.label)
            assert rep.fitted_constants["min_margin"] >= -1e-8, sc.label
            assert rep.passed


# --- 6: subjet propagation --------------------------------------------------------------------

def test_criterion_6_subjet(box_grid):
    with criterion(6, "subjet (2, 2) passes with m_k >= -1e-3, (2, 2.5) fails with m -> -0.25"):
        sc = box_scenario()
        rep = S.verify_subjet_propagation(sc, box_grid, [[-2.0]])
        assert rep.passed
        assert len(rep.details["jets"]) == 5
        for jet in rep.details["jets"]:
            assert min(r["m"] for r in jet["m_table"]) >= -1e-3
        arc = integrate_characteristics(sc, steps=S.DEFAULT_STEPS)
        for t in S.sample_times(sc.t0, sc.T):
            x, p = arc.at(t)
            bad = jets.test_jet(box_grid, JetCandidate(t, x, -p, [[2.5]], "subjet"))
            assert bad.verdict == "fail"
            assert bad.details["m_table"][-1]["m"] == pytest.approx(-0.25, abs=0.05)
        # the propagated form refuses the same candidate at the terminal cost
        with pytest.raises(PremiseFailed):
            S.verify_subjet_propagation(sc, box_grid, [[-2.5]])


# --- 7: superjet propagation --------------------------------------------------------------------

def test_criterion_7_superjet(ball_grid):
    with criterion(7, "2-D superjet passes on (t_c, T], frontier within 5 dt of t_c"):
        sc = ball_scenario()
        rep = S.verify_superjet_propagation(sc, ball_grid, -np.eye(2))
        assert rep.passed
        t_c = rep.fitted_constants["conjugate_time"]
        assert t_c == pytest.approx(0.0, abs=1e-3)
        assert all(n.t > t_c for n in rep.nodes if n.t is not None)
        dt = (sc.T - sc.t0) / S.DEFAULT_STEPS
        assert abs(rep.fitted_constants["frontier"] - t_c) <= 5 * dt


# --- 8: structural invariants -------------------------------------------------------------------

SCENARIOS = {p.stem: load_scenario(p).scenario for p in bundled_scenarios()}
vec = st.lists(st.floats(-2, 2), min_size=2, max_size=2).map(np.array)
PROPERTY = settings(max_examples=100, deadline=None, derandomize=True)


def _hamiltonian_invariants(model):
    @PROPERTY
    @given(x=vec, p=vec, lam=st.floats(0.01, 100))
    def check(x, p, lam):
        x, p = x[: model.dim], p[: model.dim]
        Hv = model.eval(x, p)
        assert abs(model.eval(x, lam * p) - lam * Hv) <= 1e-9 * lam * (1 + abs(Hv))
        # the box Hamiltonian is not differentiable where a coordinate of p vanishes
        if np.abs(p).min() < 1e-3:
            return
        assert abs(Hv - model.grad_p(x, p) @ p) <= 1e-9 * (1 + abs(Hv))
        Hpp = model.hess(x, p)[3]
        assert np.linalg.norm(Hpp @ p) <= 1e-9 * (1 + np.linalg.norm(Hpp, 2)) * np.linalg.norm(p)
    check()


def _flow_invariants(sc):
    n = sc.model.dim

    @PROPERTY
    @given(z=vec.filter(lambda z: np.abs(z).min() > 0.1), a=vec, b=st.floats(-2, 2),
           anchor=st.sampled_from([TERMINAL, INITIAL]))
    def check(z, a, b, anchor):
        scen = ControlScenario(sc.model, sc.cost, sc.t0, sc.T, sc.x0, terminal_state=z[:n])
        arc = integrate_characteristics(scen, steps=100)
        assert maximum_principle_residual(arc, sc.model) <= 1e-8 + 10 * arc.dt ** 2
        Hb = np.array([[a[0], b], [b, a[1]]])[:n, :n]
        vs = integrate_variational(arc, sc.model, Hb, anchor=anchor)
        assert vs.symplectic_drift() <= 1e-8
        sol = integrate_riccati_direct(arc, sc.model, -Hb, anchor=anchor)
        for R in sol.R:
            if np.all(np.isfinite(R)):
                assert np.abs(R - R.T).max() <= 1e-10 * (1 + np.linalg.norm(R, 2))
    check()


def _hjb_monotone(model, spec):
    @PROPERTY
    @given(a=st.floats(-2, 2), c=st.floats(0, 2), d=st.floats(-1, 1), e=st.floats(0, 1))
    def check(a, c, d, e):
        phi1 = lambda z: a * float(z @ z)
        phi2 = lambda z: phi1(z) + c * float(np.abs(z - d).sum()) + e
        vals = []
        for phi in (phi1, phi2):
            cost = TerminalCost(value=phi, grad=lambda z: None, hess=lambda z: None)
            scen = ControlScenario(model, cost, spec.t0, spec.T, np.zeros(spec.dim))
            vals.append(solve_value_function(scen, spec, 8).values)
        assert int(np.sum(vals[0] > vals[1])) == 0
    check()


SMALL = {1: GridSpec(1, (-2.0,), (2.0,), 41, 100, 0.0, 1.0),
         2: GridSpec(2, (-2.0, -2.0), (2.0, 2.0), 41, 100, 0.0, 1.0)}


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_criterion_8_property_suite(name):
    with criterion(8, f"structural invariants, 100 samples each ({name})"):
        sc = SCENARIOS[name]
        _hamiltonian_invariants(sc.model)
        _flow_invariants(sc)
        _hjb_monotone(sc.model, SMALL[sc.model.dim])


# --- 9: regularity probe caveat and exit codes --------------------------------------------------

def test_criterion_9_probe_and_exit_codes(box_grid, tmp_path):
    with criterion(9, "probe refuses at x = T - t, passes at x > T - t; CLI exit codes"):
        for t in (0.0, 0.5):
            with pytest.raises(PremiseFailed, match="q = 0"):
                S.probe_c2_regularity(box_scenario(x0=1.0 - t, t0=t), box_grid)
        assert S.probe_c2_regularity(box_scenario(x0=0.8, t0=0.5), box_grid).passed
        assert S.probe_c2_regularity(box_scenario(), box_grid).passed

        run = lambda *a: cli.main([str(v) for v in a])
        assert run("--scenario", "box1d", "--command", "verify", "--out", tmp_path / "ok") == 0
        manifest = json.loads((tmp_path / "ok" / "manifest.json").read_text())
        assert set(manifest["scenarios"][0]["verdicts"].values()) <= {"pass", "premise_failed"}

        box = (BUNDLED_DIR / "box1d.toml").read_text()
        bad = tmp_path / "bad.toml"
        bad.write_text(box.replace("T = 1.0", "T = -1.0"))
        assert run("--scenario", bad, "--out", tmp_path / "bad") == 1

        coarse = tmp_path / "coarse.toml"
        coarse.write_text(box.replace("[verify]", '[verify]\nchecks = ["superjet_propagation"]'))
        args = ("--scenario", coarse, "--command", "verify", "--grid-points", 81,
                "--time-steps", 100)
        assert run(*args, "--out", tmp_path / "c1") == 2
        assert run(*args, "--allow-inconclusive", "--out", tmp_path / "c2") == 0
