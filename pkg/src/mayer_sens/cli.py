"""Command-line front end: scenario file in, CSV/JSON artifacts and a summary out.

Commands run a prefix of the pipeline validate -> flow -> riccati ->
conjugate -> hjb -> verify; ``all`` runs every stage. Each scenario writes
into ``<out>/<label>/``; ``<out>/manifest.json`` lists every artifact with
the check ids it carries and is written once, after all scenarios finish.

Exit status: 0 when every executed verification passes (inconclusive counts
as passing only with ``--allow-inconclusive``), 2 when any fails, 1 on usage,
scenario or I/O errors. A check whose premise does not hold is reported as
``premise_failed`` and does not count as a failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import scenario_io, sensitivity
from .characteristics import (
    DEFAULT_STEPS,
    dynamic_programming_monotonicity,
    integrate_characteristics,
    maximum_principle_residual,
    write_arc_csv,
)
from .errors import MayerSensError, PremiseFailed, ScenarioError
from .hamiltonian import validate_model
from .hjb import solve_value_function, write_grid
from .report import INCONCLUSIVE, PASS, VerificationReport, dumps
from .riccati import (
    TERMINAL,
    comparison_bound,
    detect_conjugate_time,
    integrate_riccati_direct,
    integrate_variational,
    riccati_from_variational,
    write_matrix_csv,
    write_variational_csv,
)

COMMANDS = ("validate", "flow", "riccati", "conjugate", "hjb", "verify", "all")
STAGES = ("validate", "flow", "riccati", "conjugate", "hjb", "verify")
# stages each command needs, in pipeline order
NEEDS = {
    "validate": ("validate",),
    "flow": ("flow",),
    "riccati": ("flow", "riccati"),
    "conjugate": ("flow", "conjugate"),
    "hjb": ("flow", "hjb"),
    "verify": ("flow", "hjb", "verify"),
    "all": STAGES,
}
PREMISE_FAILED = "premise_failed"
ERROR = "error"
GRID_EXPORT_SLICES = 11
THREADS_ENV = "MAYER_SENS_THREADS"


@dataclass
class RunConfig:
    scenarios: list
    command: str = "all"
    steps: int = DEFAULT_STEPS
    grid_points: int | None = None
    time_steps: int | None = None
    directions: int | None = None
    seed: int = 0
    out: Path = Path("out")
    allow_inconclusive: bool = False
    probes: list = field(default_factory=list)


@dataclass
class ScenarioResult:
    label: str
    source: str
    artifacts: list = field(default_factory=list)   # (relative path, [check ids])
    verdicts: dict = field(default_factory=dict)    # check id -> verdict
    summary: list = field(default_factory=list)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument handling

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="mayer-sens", description=__doc__.splitlines()[0],
                epilog="Scenario file format:\n" + scenario_io.__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--scenario", action="append", default=[], metavar="PATH",
                   help="scenario TOML file or bundled name (repeatable; default: all bundled)")
    p.add_argument("--command", choices=COMMANDS, default="all")
    p.add_argument("--steps", type=int, default=DEFAULT_STEPS,
                   help="integrator steps along the arc")
    p.add_argument("--grid-points", type=int, help="grid points per axis (odd)")
    p.add_argument("--time-steps", type=int, help="grid time steps")
    p.add_argument("--directions", type=int, help="sampled velocity directions")
    p.add_argument("--seed", type=int, default=0, help="seed for sampled directions")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--allow-inconclusive", action="store_true")
    p.add_argument("--probe", action="append", default=[], metavar="T:X1[,X2]",
                   help="grid query point for value/gradient/Hessian export (repeatable)")
    return p


def parse_probe(text):
    try:
        t, xs = text.split(":")
        return float(t), np.array([float(v) for v in xs.split(",")])
    except ValueError:
        raise UsageError(f"bad --probe {text!r}; expected T:X1[,X2]") from None


def resolve_scenario(name) -> Path:
    p = Path(name)
    if p.exists():
        return p
    bundled = scenario_io.BUNDLED_DIR / f"{name}.toml"
    if bundled.exists():
        return bundled
    raise UsageError(f"no scenario file {name!r} (bundled: "
                     f"{', '.join(b.stem for b in scenario_io.bundled_scenarios())})")


def thread_cap():
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


# ---------------------------------------------------------------------------
# one scenario

class _Writer:
    def __init__(self, root: Path, label: str, result: ScenarioResult):
        self.root = root
        self.dir = root / label
        self.result = result

    def path(self, rel):
        p = self.dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, rel, checks=()):
        self.result.artifacts.append((str(Path(self.result.label) / rel), list(checks)))

    def json(self, rel, obj, checks=()):
        self.path(rel).write_text(dumps(obj))
        self.record(rel, checks)

    def report(self, rep: VerificationReport, check=None):
        check = check or rep.check
        rel = f"reports/{check}.json"
        self.json(rel, rep.to_dict(), [check])
        self.result.verdicts[check] = rep.verdict
        self.result.summary.append(f"{rep.summary_line()}  [{self.result.label}/{rel}]")


def _record_failure(w: _Writer, check, exc):
    rel = f"reports/{check}.json"
    if isinstance(exc, PremiseFailed):
        verdict, text = PREMISE_FAILED, str(exc)
        body = {"check": check, "verdict": verdict, "message": text,
                "premise_report": exc.report.to_dict() if exc.report is not None else None}
    else:
        verdict, text = ERROR, f"{exc.code}: {exc}"
        body = {"check": check, "verdict": verdict, "code": exc.code, "message": str(exc)}
    w.json(rel, body, [check])
    w.result.verdicts[check] = verdict
    w.result.summary.append(f"{check:<34} {verdict:<14} {text}  [{w.result.label}/{rel}]")


def _guarded(w: _Writer, check, fn):
    """Run one verification; premise failures and module errors become records."""
    try:
        rep = fn()
    except MayerSensError as exc:
        _record_failure(w, check, exc)
        return None
    w.report(rep, check)
    return rep


def _grid_spec(sf, cfg):
    if sf.grid is None:
        raise ScenarioError("the hjb and verify commands need a [grid] section", key="grid")
    changes = {}
    if cfg.grid_points is not None:
        changes["points_per_axis"] = cfg.grid_points
    if cfg.time_steps is not None:
        changes["time_steps"] = cfg.time_steps
    try:
        return dataclasses.replace(sf.grid, **changes)
    except ValueError as exc:
        raise UsageError(f"grid override rejected: {exc}") from None


def _flow_report(arc, model, label):
    rep = VerificationReport(label=label, check="flow_invariants",
                             premise="characteristic arc from the terminal state")
    inv = arc.check_invariants()
    rep.add(None, maximum_principle_residual(arc, model), 1e-8 + 10 * arc.dt ** 2,
            "maximum_principle_residual")
    rep.add(None, 0.0 if inv["dichotomy"] else 1.0, 0.0, "costate_dichotomy")
    rep.add(None, inv["costate_ratio"], inv["gronwall_bound"] * (1 + 1e-9), "gronwall_ratio")
    rep.fitted_constants["lipschitz_c"] = arc.lipschitz_c
    return rep.finalize()


def _riccati_stage(w, sf, arc):
    sc = sf.scenario
    R_T = -np.atleast_2d(sc.cost.hess(arc.states[-1]))
    vs = integrate_variational(arc, sc.model, -R_T, TERMINAL)
    direct = integrate_riccati_direct(arc, sc.model, R_T, TERMINAL)
    quotient = riccati_from_variational(vs)
    write_variational_csv(vs, w.path("variational.csv"))
    w.record("variational.csv", ["riccati"])
    write_matrix_csv(w.path("riccati.csv"), direct.times, direct.R, "R")
    w.record("riccati.csv", ["riccati"])

    # near a blow-up both solutions lose accuracy; compare away from it, as the
    # Hessian check does
    lo = arc.t0
    stops = [s.t_star for s in (direct, quotient) if s.t_star is not None]
    if stops:
        t_star = max(stops)
        lo = t_star + sensitivity.FRONTIER_GAP * (arc.T - t_star)
    qmap = {float(t): r for t, r in zip(quotient.times, quotient.R)}
    gap = max((float(np.abs(r - qmap[float(t)]).max()) / (1 + float(np.abs(r).max()))
               for t, r in zip(direct.times, direct.R)
               if float(t) >= lo and float(t) in qmap and np.all(np.isfinite(r))),
              default=0.0)
    rep = VerificationReport(label=sc.label, check="riccati_consistency",
                             premise="terminal anchor R(T) = -Hess phi(x(T))")
    rep.add(None, direct.asymmetry(), 1e-10, "symmetry")
    rep.add(None, vs.symplectic_drift(), 1e-8, "symplectic_drift")
    rep.add(None, gap, sensitivity.RICCATI_CROSSCHECK_TOL, "quotient_vs_direct")
    rep.fitted_constants.update(status=direct.status, t_star=direct.t_star, compared_from=lo,
                                quotient_status=quotient.status, quotient_t_star=quotient.t_star)
    w.report(rep.finalize())
    w.json("riccati_summary.json", {
        "status": direct.status, "t_star": direct.t_star, "source": direct.source,
        "quotient_status": quotient.status, "quotient_t_star": quotient.t_star,
        "asymmetry": direct.asymmetry(), "symplectic_drift": vs.symplectic_drift(),
        "quotient_vs_direct": gap, "compared_from": lo,
    }, ["riccati", "riccati_consistency"])
    _guarded(w, "comparison_bound", lambda: comparison_bound(arc, sc.model, R_T, TERMINAL,
                                                              label=sc.label))


def _conjugate_stage(w, sf, arc):
    sc = sf.scenario
    vs = integrate_variational(arc, sc.model, sc.cost.hess(arc.states[-1]), TERMINAL)
    conj = detect_conjugate_time(vs)
    body = conj.to_dict()
    body.update(label=sc.label, t0=sc.t0, T=sc.T, steps=len(arc.times) - 1)
    w.json("conjugate.json", body, ["conjugate_time"])
    tc = "none on the arc" if conj.t_c is None else f"{conj.t_c:.6g}"
    w.result.summary.append(f"{'conjugate_time':<34} {'t_c = ' + tc:<14}  "
                            f"[{sc.label}/conjugate.json]")


def _hjb_stage(w, sf, cfg, arc):
    sc = sf.scenario
    spec = _grid_spec(sf, cfg)
    directions = cfg.directions if cfg.directions is not None else sf.directions
    try:
        grid = solve_value_function(sc, spec, directions)
    except ValueError as exc:
        raise UsageError(f"grid solve rejected its inputs: {exc}") from None
    manifest = write_grid(grid, w.path("grid"), max_slices=GRID_EXPORT_SLICES)
    w.record("grid/manifest.json", ["hjb"])
    for entry in manifest["slices"]:
        w.record(f"grid/{entry['file']}", ["hjb"])
    w.result.summary.append(
        f"{'hjb':<34} {'solved':<14} budget = {grid.error_budget:.3g}, clean fraction "
        f"at t0 = {1 - manifest['contamination']['fraction_initial_slice']:.3g}  "
        f"[{sc.label}/grid/manifest.json]")

    def monotone():
        t_start = max(arc.t0, spec.t0)
        keep = arc.times >= t_start - 1e-12
        sub = dataclasses.replace(arc, times=arc.times[keep], states=arc.states[keep],
                                  costates=arc.costates[keep])
        return dynamic_programming_monotonicity(grid, sub, label=sc.label)

    _guarded(w, "dynamic_programming_monotonicity", monotone)

    if cfg.probes:
        rows = []
        for t, x in cfg.probes:
            if x.size != spec.dim:
                raise UsageError(f"--probe point {x.tolist()} does not have dimension {spec.dim}")
            try:
                rows.append({"t": t, "x": x, "value": grid.interpolate(t, x),
                             "gradient": grid.numerical_gradient(t, x),
                             "hessian": grid.numerical_hessian(t, x),
                             "clean": grid.is_clean(t, x)})
            except MayerSensError as exc:
                rows.append({"t": t, "x": x, "error": exc.code, "message": str(exc)})
        w.json("probes.json", {"stencil_step": grid.stencil, "probes": rows}, ["hjb"])
    return grid


def _verify_stage(w, sf, cfg, arc, grid):
    sc, v = sf.scenario, sf.verify
    n_times = v.get("sample_times", sensitivity.DEFAULT_SAMPLE_TIMES)
    common = {"steps": cfg.steps, "n_times": n_times, "arc": arc}
    seeded = dict(common, seed=cfg.seed)
    jobs = {
        "first_order_propagation":
            lambda: sensitivity.verify_first_order_propagation(sc, grid, **seeded),
        "gradient_relation":
            lambda: sensitivity.verify_gradient_relation(sc, grid, **seeded),
        "hessian_propagation_forward":
            lambda: sensitivity.verify_hessian_propagation(
                sc, grid, "forward", window=v.get("hessian_window"),
                relative_tol=v.get("hessian_relative_tol"), **common),
        "hessian_propagation_backward":
            lambda: sensitivity.verify_hessian_propagation(
                sc, grid, "backward", window=v.get("hessian_window"),
                relative_tol=v.get("hessian_relative_tol"), **common),
        "c2_regularity":
            lambda: sensitivity.probe_c2_regularity(sc, grid, cfg.steps, n_times,
                                                    seed=cfg.seed),
    }
    if "subjet_R0" in v:
        jobs["subjet_propagation"] = lambda: sensitivity.verify_subjet_propagation(
            sc, grid, v["subjet_R0"], **seeded)
    if "superjet_Q" in v:
        jobs["superjet_propagation"] = lambda: sensitivity.verify_superjet_propagation(
            sc, grid, v["superjet_Q"], **seeded)
    wanted = v.get("checks", [c for c in scenario_io.CHECK_IDS if c in jobs])
    for check in wanted:
        if check not in jobs:
            raise ScenarioError(f"check {check!r} needs its [verify] data "
                                "(subjet_R0 or superjet_Q)", key="verify.checks")
        _guarded(w, check, jobs[check])


def run_scenario(path: Path, cfg: RunConfig) -> ScenarioResult:
    sf = scenario_io.load_scenario(path)
    sc = sf.scenario
    res = ScenarioResult(label=sc.label, source=str(path))
    w = _Writer(cfg.out, sc.label, res)
    stages = NEEDS[cfg.command]

    if "validate" in stages:
        w.report(validate_model(sc.model, seed=cfg.seed, label=sc.label))
    arc = grid = None
    if "flow" in stages:
        try:
            arc = integrate_characteristics(sc, steps=cfg.steps)
        except MayerSensError as exc:
            _record_failure(w, "flow_invariants", exc)
            return res
        write_arc_csv(arc, w.path("arc.csv"))
        w.record("arc.csv", ["flow"])
        _guarded(w, "flow_invariants", lambda: _flow_report(arc, sc.model, sc.label))
    if "riccati" in stages:
        _riccati_stage(w, sf, arc)
    if "conjugate" in stages:
        _conjugate_stage(w, sf, arc)
    if "hjb" in stages:
        grid = _hjb_stage(w, sf, cfg, arc)
    if "verify" in stages:
        _verify_stage(w, sf, cfg, arc, grid)
    return res


# ---------------------------------------------------------------------------
# batch

def exit_status(results, allow_inconclusive=False) -> int:
    ok = {PASS, PREMISE_FAILED} | ({INCONCLUSIVE} if allow_inconclusive else set())
    verdicts = [v for r in results for v in r.verdicts.values()]
    return 0 if all(v in ok for v in verdicts) else 2


def write_manifest(cfg: RunConfig, results) -> Path:
    artifacts = []
    for r in results:
        for rel, checks in r.artifacts:
            artifacts.append({"path": rel, "scenario": r.label, "checks": checks})
    body = {
        "command": cfg.command,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "allow_inconclusive": cfg.allow_inconclusive,
        "scenarios": [{"label": r.label, "source": Path(r.source).name,
                       "verdicts": r.verdicts} for r in results],
        "artifacts": artifacts,
        "exit_status": exit_status(results, cfg.allow_inconclusive),
    }
    path = cfg.out / "manifest.json"
    path.write_text(dumps(body))
    return path


def run(cfg: RunConfig) -> int:
    if cfg.steps < 2:
        raise UsageError("--steps must be >= 2")
    if cfg.directions is not None and cfg.directions < 1:
        raise UsageError("--directions must be positive")
    paths = [resolve_scenario(s) for s in cfg.scenarios] or scenario_io.bundled_scenarios()
    # parse everything up front so that schema errors stop the batch before any work
    labels = [scenario_io.load_scenario(p).scenario.label for p in paths]
    if len(set(labels)) != len(labels):
        raise UsageError(f"scenario labels must be unique, got {labels}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    workers = min(thread_cap(), len(paths))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda p: run_scenario(p, cfg), paths))
    write_manifest(cfg, results)
    lines = []
    for r in results:
        lines.append(f"== {r.label} ({Path(r.source).name})")
        lines += [f"   {s}" for s in r.summary]
    status = exit_status(results, cfg.allow_inconclusive)
    lines.append(f"exit status {status}; artifacts listed in {cfg.out / 'manifest.json'}")
    print("\n".join(lines))
    return status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(
            scenarios=args.scenario, command=args.command, steps=args.steps,
            grid_points=args.grid_points, time_steps=args.time_steps,
            directions=args.directions, seed=args.seed, out=args.out,
            allow_inconclusive=args.allow_inconclusive,
            probes=[parse_probe(s) for s in args.probe],
        )
        return run(cfg)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        print("\nScenario file format:\n" + scenario_io.__doc__, file=sys.stderr)
        return 1
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
