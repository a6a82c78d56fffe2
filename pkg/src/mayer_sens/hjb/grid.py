"""Semi-Lagrangian value function on a rectangular space-time grid.

The backward recursion is

    V(t_k, x_i) = min_j  I[V(t_{k+1}, .)](x_i + dt * v_ij),   V(T, .) = phi,

with v_ij the support point of F(x_i) in direction d_j (the extreme points
are enough because H is a support function) and I multilinear interpolation.
Feet outside the box are clamped back in. Each node carries a taint: the
interpolation weight its value puts on clamped data (1 when any candidate
was clamped). A clamped foot misplaces a value by at most L * speed * dt per
step, so the corruption it can inject is below L * speed * (T - t0), L the
largest grid slope. A node is contaminated when its taint times that bound
exceeds ``TAINT_SHARE`` of the error budget.
The weight, not a yes/no flag, is tracked because linear interpolation
leaks a geometrically small share of every corner one cell per step, far
faster than the characteristic speed.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContaminatedRegion, NonsmoothPoint, OutOfDomain
from ..hamiltonian import ControlScenario, HamiltonianModel
from ..report import dumps
from . import _backend

logger = logging.getLogger(__name__)

# L-infinity budget C * (dx^2/dt + dt); C from the 1-D closed-form convergence study
BUDGET_CONSTANT = 0.25
# fraction of the error budget clamped data may contribute at a clean node
TAINT_SHARE = 0.1
DERIVATIVE_STENCIL = 4.0


@dataclass(frozen=True)
class GridSpec:
    dim: int
    lower: tuple
    upper: tuple
    points_per_axis: int
    time_steps: int
    t0: float
    T: float

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.dim not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if len(lower) != self.dim or len(upper) != self.dim:
            raise ValueError("lower/upper must have one entry per dimension")
        if any(hi <= lo for lo, hi in zip(lower, upper)):
            raise ValueError("upper corner must exceed lower corner on every axis")
        if self.points_per_axis < 41 or self.points_per_axis % 2 == 0:
            raise ValueError("points_per_axis must be odd and >= 41")
        if self.time_steps < 100:
            raise ValueError("time_steps must be >= 100")
        if not self.T > self.t0:
            raise ValueError("T must exceed t0")

    @property
    def axes(self):
        return [np.linspace(lo, hi, self.points_per_axis)
                for lo, hi in zip(self.lower, self.upper)]

    @property
    def spacing(self):
        return np.array([(hi - lo) / (self.points_per_axis - 1)
                         for lo, hi in zip(self.lower, self.upper)])

    @property
    def dt(self):
        return (self.T - self.t0) / self.time_steps

    @property
    def shape(self):
        return (self.points_per_axis,) * self.dim

    @property
    def times(self):
        return np.linspace(self.t0, self.T, self.time_steps + 1)

    def nodes(self):
        """All grid nodes, C order, shape (N, dim)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def required_padding(self, model: HamiltonianModel, x0) -> float:
        """Radius around x0 that trajectories can reach before T.

        Uses the growth bound |v| <= gamma (1 + |x|) through Gronwall, or the
        uniform speed bound when the model has one (whichever is smaller).
        """
        horizon = self.T - self.t0
        r = (np.expm1(model.growth_gamma * horizon)
             * (1.0 + float(np.linalg.norm(x0))))
        if model.speed_bound is not None:
            r = min(r, model.speed_bound * horizon)
        return float(r)

    def covers(self, model, x0, margin=0.0) -> bool:
        r = self.required_padding(model, x0) + margin
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return bool(np.all(x0 - r >= np.array(self.lower) - 1e-12)
                    and np.all(x0 + r <= np.array(self.upper) + 1e-12))


@dataclass(frozen=True)
class GridValueFunction:
    spec: GridSpec
    values: np.ndarray          # (S+1, *shape)
    contaminated: np.ndarray    # (S+1, *shape) bool
    error_budget: float
    budget_constant: float = BUDGET_CONSTANT
    backend: str = ""
    velocity_samples: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def times(self):
        return self.spec.times

    @property
    def spacing(self):
        return self.spec.spacing

    @property
    def stencil(self):
        """Default derivative step per axis (4 grid cells)."""
        return DERIVATIVE_STENCIL * self.spacing

    # -- point queries -----------------------------------------------------

    def _time_weights(self, t):
        ts = self.times
        tol = 1e-12 * (1 + abs(ts[-1]) + abs(ts[0]))
        if t < ts[0] - tol or t > ts[-1] + tol:
            raise OutOfDomain(f"t={t} outside grid time range [{ts[0]}, {ts[-1]}]")
        u = (t - ts[0]) / self.spec.dt
        k = int(round(u))
        if abs(u - k) < 1e-9:
            return [(min(max(k, 0), len(ts) - 1), 1.0)]
        k = int(np.clip(np.floor(u), 0, len(ts) - 2))
        a = u - k
        return [(k, 1.0 - a), (k + 1, a)]

    def _space_stencil(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.spec.dim,):
            raise ValueError(f"query point has dimension {x.size}, grid has {self.spec.dim}")
        lo = np.array(self.spec.lower)
        hi = np.array(self.spec.upper)
        h = self.spacing
        tol = 1e-12 * (1 + np.abs(lo) + np.abs(hi))
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            raise OutOfDomain(f"x={x} outside grid box")
        u = np.clip((x - lo) / h, 0.0, self.spec.points_per_axis - 1)
        i0 = np.minimum(np.floor(u).astype(int), self.spec.points_per_axis - 2)
        a = u - i0
        corners = []
        for bits in np.ndindex(*(2,) * self.spec.dim):
            bits = np.array(bits)
            w = float(np.prod(np.where(bits == 1, a, 1.0 - a)))
            corners.append((tuple(i0 + bits), w))
        return corners

    def interpolate(self, t, x, check=True) -> float:
        """Linear in time, multilinear in space."""
        tw = self._time_weights(t)
        sw = self._space_stencil(x)
        val = 0.0
        for k, wt in tw:
            if wt == 0.0:
                continue
            for idx, ws in sw:
                if ws == 0.0:
                    continue
                if check and self.contaminated[(k,) + idx]:
                    raise ContaminatedRegion(f"query (t={t}, x={x}) touches a contaminated node")
                val += wt * ws * self.values[(k,) + idx]
        return float(val)

    def is_clean(self, t, x) -> bool:
        try:
            self.interpolate(t, x)
        except (ContaminatedRegion, OutOfDomain):
            return False
        return True

    def numerical_gradient(self, t, x, step=None) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        rho = self.stencil if step is None else np.broadcast_to(step, x.shape).astype(float)
        g = np.zeros(x.size)
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = rho[i]
            g[i] = (self.interpolate(t, x + e) - self.interpolate(t, x - e)) / (2 * rho[i])
        return g

    def numerical_hessian(self, t, x, step=None) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = x.size
        rho = self.stencil if step is None else np.broadcast_to(step, x.shape).astype(float)
        v0 = self.interpolate(t, x)
        Hm = np.zeros((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = rho[i]
            Hm[i, i] = (self.interpolate(t, x + e) - 2 * v0
                        + self.interpolate(t, x - e)) / rho[i] ** 2
            for j in range(i + 1, n):
                f = np.zeros(n)
                f[j] = rho[j]
                Hm[i, j] = (self.interpolate(t, x + e + f) - self.interpolate(t, x + e - f)
                            - self.interpolate(t, x - e + f)
                            + self.interpolate(t, x - e - f)) / (4 * rho[i] * rho[j])
                Hm[j, i] = Hm[i, j]
        return 0.5 * (Hm + Hm.T)

    # -- budgets -----------------------------------------------------------

    def interpolation_noise(self, curvature) -> float:
        """Worst multilinear interpolation error for a function of given curvature."""
        return float(np.sum(self.spacing ** 2)) * max(float(curvature), 1.0) / 8.0

    def gradient_budget(self, curvature=1.0, step=None) -> float:
        rho = float(np.min(self.stencil if step is None else step))
        return 2.0 * self.interpolation_noise(curvature) / rho + rho ** 2 * max(curvature, 1.0)

    def hessian_budget(self, curvature=1.0, step=None) -> float:
        rho = float(np.min(self.stencil if step is None else step))
        return 4.0 * self.interpolation_noise(curvature) / rho ** 2 + \
            self.budget_constant * self.spec.dt * max(curvature, 1.0)

    def clean_fraction(self, k=0) -> float:
        return float(1.0 - self.contaminated[k].mean())

    def semiconcavity_estimate(self, k=0, stride=1) -> float:
        """Largest midpoint excess (V(x+h) + V(x-h) - 2V(x)) / |h|^2 over clean nodes, h on axes."""
        V = self.values[k]
        C = self.contaminated[k]
        best = -np.inf
        for ax, h in enumerate(self.spacing):
            s = stride
            sl_c = [slice(s, -s) if a == ax else slice(None) for a in range(V.ndim)]
            sl_p = [slice(2 * s, None) if a == ax else slice(None) for a in range(V.ndim)]
            sl_m = [slice(None, -2 * s) if a == ax else slice(None) for a in range(V.ndim)]
            excess = (V[tuple(sl_p)] + V[tuple(sl_m)] - 2 * V[tuple(sl_c)]) / (s * h) ** 2
            ok = ~(C[tuple(sl_p)] | C[tuple(sl_m)] | C[tuple(sl_c)])
            if ok.any():
                best = max(best, float(excess[ok].max()))
        return best


# ---------------------------------------------------------------------------
# solver

def sample_directions(dim, count):
    """Unit directions: {-1, +1} in 1-D, ``count`` equispaced half-offset angles in 2-D."""
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if count < 3:
        raise ValueError("2-D grids need at least 3 directions")
    th = 2 * np.pi * (np.arange(count) + 0.5) / count
    return np.stack([np.cos(th), np.sin(th)], axis=1)


def support_velocities(model: HamiltonianModel, nodes, directions):
    """v[i, j] = support point of F(nodes[i]) in direction directions[j]."""
    N, J = len(nodes), len(directions)
    out = np.empty((N, J, model.dim))
    if model.x_independent:
        row = np.array([model.support_point(nodes[0], d) for d in directions])
        out[:] = row[None]
        return out
    for i, x in enumerate(nodes):
        for j, d in enumerate(directions):
            out[i, j] = model.support_point(x, d)
    return out


def _foot_stencil(spec: GridSpec, feet):
    """Base flat index, cell fractions and clamp flags for feet (N, J, d)."""
    lo = np.array(spec.lower)
    hi = np.array(spec.upper)
    h = spec.spacing
    n = spec.points_per_axis
    tol = 1e-12 * (1 + np.abs(lo) + np.abs(hi))
    outside = np.any((feet < lo - tol) | (feet > hi + tol), axis=2)
    u = np.clip((feet - lo) / h, 0.0, n - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), n - 2)
    frac = np.ascontiguousarray(u - i0)
    strides = np.array([n ** (spec.dim - 1 - a) for a in range(spec.dim)], dtype=np.int64)
    base = np.ascontiguousarray((i0 * strides).sum(axis=2), dtype=np.int64)
    return base, frac, outside.astype(np.uint8), strides


def solve_value_function(scenario: ControlScenario, spec: GridSpec,
                         velocity_samples: int | None = None, backend: str | None = None,
                         roi=None) -> GridValueFunction:
    """Backward semi-Lagrangian recursion for the value function on ``spec``.

    ``roi`` optionally names a set of points that must stay uncontaminated at
    the initial slice; ContaminatedRegion is raised otherwise.
    """
    model = scenario.model
    if model.dim != spec.dim:
        raise ValueError("grid and model dimensions differ")
    if model.family_tag not in ("interval_box", "affine_control"):
        raise ValueError("the grid oracle supports interval_box and affine_control models")
    if velocity_samples is None:
        velocity_samples = 2 if spec.dim == 1 else 64
    if not spec.covers(model, scenario.x0):
        logger.warning("grid box does not cover the reachable padding around x0 "
                       "(%.3g); relying on the contamination mask",
                       spec.required_padding(model, scenario.x0))
    nodes = spec.nodes()
    dirs = sample_directions(spec.dim, velocity_samples)
    try:
        vel = support_velocities(model, nodes, dirs)
    except NonsmoothPoint as exc:
        raise ValueError(f"direction sample hits a nonsmooth point of H: {exc}") from exc
    feet = nodes[:, None, :] + spec.dt * vel
    base, frac, outside, strides = _foot_stencil(spec, feet)

    S = spec.time_steps
    values = np.empty((S + 1, len(nodes)))
    values[S] = [scenario.cost.value(x) for x in nodes]
    taint = np.zeros((S + 1, len(nodes)))
    sweep, name = _backend.get(backend)
    sweep(values, taint, base, frac, outside, strides)

    shape = (S + 1,) + spec.shape
    dx2_dt = float(np.sum(spec.spacing ** 2)) / spec.dt
    budget = BUDGET_CONSTANT * (dx2_dt + spec.dt)
    V = values.reshape(shape)
    slope = max(float(np.abs(np.diff(V, axis=a + 1)).max()) / spec.spacing[a]
                for a in range(spec.dim))
    reach = slope * float(np.linalg.norm(vel, axis=-1).max()) * (spec.T - spec.t0)
    taint_tol = TAINT_SHARE * budget / reach if reach > 0 else np.inf
    grid = GridValueFunction(
        spec=spec, values=values.reshape(shape), contaminated=taint.reshape(shape) > taint_tol,
        error_budget=budget, backend=name, velocity_samples=len(dirs),
        meta={"label": scenario.label, "taint_tolerance": float(min(taint_tol, 1.0))},
    )
    if roi is not None:
        for x in np.atleast_2d(roi):
            if not grid.is_clean(spec.t0, x):
                raise ContaminatedRegion(f"region of interest point {x} is contaminated; "
                                         "enlarge the grid box")
    return grid


# ---------------------------------------------------------------------------
# export

def write_grid(grid: GridValueFunction, outdir, max_slices: int | None = None) -> dict:
    """CSV per exported time slice plus manifest.json; returns the manifest."""
    os.makedirs(outdir, exist_ok=True)
    spec = grid.spec
    S = spec.time_steps
    if max_slices is None or max_slices >= S + 1:
        ks = list(range(S + 1))
    else:
        ks = sorted(set(np.linspace(0, S, max_slices).round().astype(int).tolist()))
    nodes = spec.nodes()
    files = []
    for k in ks:
        name = f"slice_{k:05d}.csv"
        with open(os.path.join(outdir, name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(spec.dim)] + ["V", "contaminated"])
            V = grid.values[k].ravel()
            C = grid.contaminated[k].ravel()
            for x, v, c in zip(nodes, V, C):
                w.writerow([f"{xi:.17g}" for xi in x] + [f"{v:.17g}", int(c)])
        files.append({"file": name, "slice": k, "t": float(grid.times[k])})
    manifest = {
        "spec": {"dim": spec.dim, "lower": list(spec.lower), "upper": list(spec.upper),
                 "points_per_axis": spec.points_per_axis, "time_steps": spec.time_steps,
                 "t0": spec.t0, "T": spec.T},
        "error_budget": grid.error_budget,
        "budget_constant": grid.budget_constant,
        "velocity_samples": grid.velocity_samples,
        "backend": grid.backend,
        "contamination": {
            "fraction_initial_slice": float(grid.contaminated[0].mean()),
            "fraction_all_slices": float(grid.contaminated.mean()),
        },
        "slices": files,
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        fh.write(dumps(manifest))
    return manifest
