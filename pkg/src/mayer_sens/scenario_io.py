"""Scenario files: TOML with [model], [cost], [problem], optional [grid] and [verify].

Example::

    label = "box1d"

    [model]
    family = "interval_box"      # interval_box | ball | affine_control
    dim = 1
    radius = 1.0

    [cost]
    type = "quadratic"           # quadratic | expression
    A = [[2.0]]

    [problem]
    t0 = 0.0
    T = 1.0
    x0 = [2.0]

For ``affine_control`` the fields ``h`` (n strings) and ``g`` (n rows of m
strings or numbers) are expressions in x1..xn, differentiated symbolically.
An ``expression`` cost gives ``expr`` in the same variables, with optional
``regularity`` and ``semiconcave``. Errors name the key and its line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import sympy

from .errors import ScenarioError
from .hamiltonian import (
    REGULARITY,
    ControlScenario,
    TerminalCost,
    make_affine_control_model,
    make_ball_model,
    make_interval_box_model,
    quadratic_cost,
)
from .hjb.grid import GridSpec

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

FAMILIES = ("interval_box", "ball", "affine_control")
COST_TYPES = ("quadratic", "expression")
CHECK_IDS = ("first_order_propagation", "gradient_relation", "subjet_propagation",
             "superjet_propagation", "hessian_propagation_forward",
             "hessian_propagation_backward", "c2_regularity")
BUNDLED_DIR = Path(__file__).resolve().parent / "scenarios"


@dataclass
class ScenarioFile:
    scenario: ControlScenario
    grid: GridSpec | None = None
    directions: int = 64
    verify: dict = field(default_factory=dict)
    source: str = ""
    raw: dict = field(default_factory=dict)


def bundled_scenarios():
    return sorted(BUNDLED_DIR.glob("*.toml"))


# ---------------------------------------------------------------------------
# location of keys, for error messages

class _Locator:
    def __init__(self, text):
        self.lines = text.splitlines()

    def line(self, section, key=None):
        header = re.compile(r"^\s*\[\s*" + re.escape(section) + r"\s*\]") if section else None
        in_sec = section is None
        for i, ln in enumerate(self.lines, 1):
            stripped = ln.strip()
            if stripped.startswith("["):
                if in_sec and section is None:
                    return None
                in_sec = bool(header and header.match(ln))
                if in_sec and key is None:
                    return i
                continue
            if in_sec and key is not None and re.match(r"^\s*" + re.escape(key) + r"\s*=", ln):
                return i
        return None


class _Section:
    def __init__(self, data, name, loc):
        self.data = data if data is not None else {}
        self.name = name
        self.loc = loc

    def error(self, key, msg):
        dotted = f"{self.name}.{key}" if self.name else key
        return ScenarioError(msg, key=dotted, line=self.loc.line(self.name, key))

    def has(self, key):
        return key in self.data

    def get(self, key, kind, default=None, required=False):
        if key not in self.data:
            if required:
                line = self.loc.line(self.name) if self.name else None
                dotted = f"{self.name}.{key}" if self.name else key
                raise ScenarioError("missing required key", key=dotted, line=line)
            return default
        v = self.data[key]
        try:
            return _coerce(v, kind)
        except (TypeError, ValueError) as exc:
            raise self.error(key, f"expected {kind}: {exc}") from None


def _coerce(v, kind):
    if kind == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise TypeError(f"got {type(v).__name__}")
        return float(v)
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise TypeError(f"got {type(v).__name__}")
        return v
    if kind == "bool":
        if not isinstance(v, bool):
            raise TypeError(f"got {type(v).__name__}")
        return v
    if kind == "str":
        if not isinstance(v, str):
            raise TypeError(f"got {type(v).__name__}")
        return v
    if kind == "vector":
        if not isinstance(v, list) or not all(isinstance(a, (int, float)) and
                                              not isinstance(a, bool) for a in v):
            raise TypeError("a list of numbers")
        return np.array(v, dtype=float)
    if kind == "matrix":
        if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
            raise TypeError("a list of rows")
        A = np.array(v, dtype=float)
        if A.ndim != 2:
            raise ValueError("rows of unequal length")
        return A
    raise AssertionError(kind)


# ---------------------------------------------------------------------------
# symbolic fields

def _symbols(n):
    return sympy.symbols(" ".join(f"x{i + 1}" for i in range(n)), real=True, seq=True)


def _parse_expr(text, xs, sec, key):
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return sympy.Float(text)
    if not isinstance(text, str):
        raise sec.error(key, f"expected an expression string, got {type(text).__name__}")
    allowed = {str(x): x for x in xs}
    try:
        expr = sympy.sympify(text, locals=allowed)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise sec.error(key, f"cannot parse expression {text!r}: {exc}") from None
    extra = expr.free_symbols - set(xs)
    if extra:
        raise sec.error(key, f"unknown symbols {sorted(map(str, extra))} in {text!r}")
    return expr


def _lambdify(xs, expr):
    f = sympy.lambdify([xs], expr, modules="numpy")

    def call(x):
        return np.asarray(f(np.asarray(x, dtype=float)), dtype=float)

    return call


def _affine_model(sec, n):
    xs = _symbols(n)
    h_raw = sec.data.get("h")
    g_raw = sec.data.get("g")
    if h_raw is None:
        raise sec.error("h", "missing required key")
    if g_raw is None:
        raise sec.error("g", "missing required key")
    if not isinstance(h_raw, list) or len(h_raw) != n:
        raise sec.error("h", f"expected {n} component expressions")
    if not isinstance(g_raw, list) or len(g_raw) != n or not all(isinstance(r, list) for r in g_raw):
        raise sec.error("g", f"expected {n} rows")
    m = len(g_raw[0])
    if any(len(r) != m for r in g_raw):
        raise sec.error("g", "rows of unequal length")
    if m < n:
        raise sec.error("g", f"need at least {n} columns (m >= n), got {m}")
    h = sympy.Matrix([_parse_expr(e, xs, sec, "h") for e in h_raw])
    g = sympy.Matrix([[_parse_expr(e, xs, sec, "g") for e in r] for r in g_raw])
    X = sympy.Matrix(xs)
    h_jac = h.jacobian(X)
    h_hess = sympy.Array([[[sympy.diff(h[i], xs[k], xs[l]) for l in range(n)]
                           for k in range(n)] for i in range(n)])
    g_jac = sympy.Array([[[sympy.diff(g[a, b], xs[k]) for k in range(n)]
                          for b in range(m)] for a in range(n)])
    g_hess = sympy.Array([[[[sympy.diff(g[a, b], xs[k], xs[l]) for l in range(n)]
                            for k in range(n)] for b in range(m)] for a in range(n)])
    x_indep = not (h.free_symbols or g.free_symbols)
    fields = [_lambdify(xs, e) for e in (h, g, h_jac, h_hess, g_jac, g_hess)]

    def shaped(f, shape):
        return lambda x: f(x).reshape(shape)

    return make_affine_control_model(
        shaped(fields[0], (n,)), shaped(fields[1], (n, m)), n, m,
        h_jac=shaped(fields[2], (n, n)), h_hess=shaped(fields[3], (n, n, n)),
        g_jac=shaped(fields[4], (n, m, n)), g_hess=shaped(fields[5], (n, m, n, n)),
        growth_gamma=sec.get("growth_gamma", "float"),
        x_independent=x_indep,
    )


def _expression_cost(sec, n):
    xs = _symbols(n)
    expr = _parse_expr(sec.get("expr", "str", required=True), xs, sec, "expr")
    X = sympy.Matrix(xs)
    grad = sympy.Matrix([expr]).jacobian(X).T
    hess = sympy.hessian(expr, X)
    fv, fg, fh = (_lambdify(xs, e) for e in (expr, grad, hess))
    regularity = sec.get("regularity", "str", "C2")
    if regularity not in REGULARITY:
        raise sec.error("regularity", f"must be one of {REGULARITY}")
    return TerminalCost(
        value=lambda z: float(fv(z)),
        grad=lambda z: fg(z).reshape(n),
        hess=lambda z: fh(z).reshape(n, n),
        regularity=regularity,
        holder_m=sec.get("holder_m", "float"),
        semiconcave=sec.get("semiconcave", "bool", False),
    )


# ---------------------------------------------------------------------------
# loading

def parse_scenario(text: str, source: str = "<string>") -> ScenarioFile:
    loc = _Locator(text)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioError(f"invalid TOML: {exc}", line=int(m.group(1)) if m else None) from None

    for name in ("model", "cost", "problem"):
        if not isinstance(data.get(name), dict):
            raise ScenarioError("missing required section", key=f"[{name}]")
    top = _Section(data, None, loc)
    model_s = _Section(data["model"], "model", loc)
    cost_s = _Section(data["cost"], "cost", loc)
    prob_s = _Section(data["problem"], "problem", loc)

    family = model_s.get("family", "str", required=True)
    if family not in FAMILIES:
        raise model_s.error("family", f"must be one of {FAMILIES}, got {family!r}")
    n = model_s.get("dim", "int", required=True)
    if n < 1:
        raise model_s.error("dim", "must be a positive integer")
    if family == "interval_box":
        r = model_s.get("radius", "float", 1.0)
        if not r > 0:
            raise model_s.error("radius", "must be positive")
        model = make_interval_box_model(n, r)
    elif family == "ball":
        r = model_s.get("radius", "float", 1.0)
        if not r > 0:
            raise model_s.error("radius", "must be positive")
        model = make_ball_model(n, r)
    else:
        model = _affine_model(model_s, n)

    ctype = cost_s.get("type", "str", "quadratic")
    if ctype not in COST_TYPES:
        raise cost_s.error("type", f"must be one of {COST_TYPES}")
    if ctype == "quadratic":
        A = cost_s.get("A", "matrix", required=True)
        if A.shape != (n, n):
            raise cost_s.error("A", f"expected a {n}x{n} matrix")
        if not np.allclose(A, A.T):
            raise cost_s.error("A", "must be symmetric")
        b = cost_s.get("b", "vector", np.zeros(n))
        if b.shape != (n,):
            raise cost_s.error("b", f"expected {n} entries")
        semi = cost_s.get("semiconcave", "bool", None)
        if semi is None:
            # a quadratic is semiconcave for any A; the flag is there to switch checks off
            semi = True
        cost = quadratic_cost(A, b, cost_s.get("c", "float", 0.0), semiconcave=semi)
    else:
        cost = _expression_cost(cost_s, n)

    t0 = prob_s.get("t0", "float", required=True)
    T = prob_s.get("T", "float", required=True)
    if not T > t0:
        raise prob_s.error("T", f"must exceed t0 (got t0={t0}, T={T})")
    x0 = prob_s.get("x0", "vector", required=True)
    if x0.shape != (n,):
        raise prob_s.error("x0", f"expected {n} entries")
    z = prob_s.get("terminal_state", "vector")
    if z is not None and z.shape != (n,):
        raise prob_s.error("terminal_state", f"expected {n} entries")
    label = top.get("label", "str", Path(source).stem if source else "scenario")
    scenario = ControlScenario(model, cost, t0, T, x0, label=label, terminal_state=z)

    grid = None
    directions = 64
    if isinstance(data.get("grid"), dict):
        gs = _Section(data["grid"], "grid", loc)
        lower = gs.get("lower", "vector", required=True)
        upper = gs.get("upper", "vector", required=True)
        try:
            grid = GridSpec(n, lower, upper, gs.get("points", "int", 201),
                            gs.get("time_steps", "int", 200), gs.get("t0", "float", t0), T)
        except ValueError as exc:
            raise gs.error(_grid_key(str(exc)), str(exc)) from None
        directions = gs.get("directions", "int", 2 if n == 1 else 64)
    elif "grid" in data:
        raise ScenarioError("must be a table", key="grid", line=loc.line(None, "grid"))

    verify = {}
    if isinstance(data.get("verify"), dict):
        vs = _Section(data["verify"], "verify", loc)
        for key in ("subjet_R0", "superjet_Q"):
            if vs.has(key):
                M = vs.get(key, "matrix")
                if M.shape != (n, n) or not np.allclose(M, M.T):
                    raise vs.error(key, f"expected a symmetric {n}x{n} matrix")
                verify[key] = M
        if vs.has("hessian_window"):
            w = vs.get("hessian_window", "vector")
            if w.shape != (2,) or not w[0] < w[1]:
                raise vs.error("hessian_window", "expected [lo, hi] with lo < hi")
            verify["hessian_window"] = (float(w[0]), float(w[1]))
        if vs.has("hessian_relative_tol"):
            r = vs.get("hessian_relative_tol", "float")
            if not r > 0:
                raise vs.error("hessian_relative_tol", "must be positive")
            verify["hessian_relative_tol"] = r
        if vs.has("checks"):
            checks = vs.data["checks"]
            if not isinstance(checks, list) or not all(isinstance(c, str) for c in checks):
                raise vs.error("checks", "expected a list of check names")
            unknown = [c for c in checks if c not in CHECK_IDS]
            if unknown:
                raise vs.error("checks", f"unknown checks {unknown}; known: {list(CHECK_IDS)}")
            verify["checks"] = list(checks)
        if vs.has("sample_times"):
            k = vs.get("sample_times", "int")
            if k < 2:
                raise vs.error("sample_times", "need at least 2")
            verify["sample_times"] = k
    return ScenarioFile(scenario, grid, directions, verify, source, data)


def _grid_key(msg):
    for key in ("points", "time_steps", "lower", "upper"):
        if key.split("_")[0] in msg:
            return key
    return "t0" if "T must exceed" in msg else "lower"


def load_scenario(path) -> ScenarioFile:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {p}: {exc.strerror}") from None
    return parse_scenario(text, str(p))
