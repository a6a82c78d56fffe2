"""Variational system, matrix Riccati flow and conjugate times along an arc.

Along a characteristic arc the linearised flow (X, P) solves

    X' =  H_xp X + H_pp P,
    P' = -H_xx X - H_px P,

and R = P X^{-1} solves R' + H_px R + R H_xp + R H_pp R + H_xx = 0 while X is
invertible. The conjugate time is where det X vanishes (equivalently |R|
blows up).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .characteristics import Arc
from .errors import AsymmetryDrift, DegenerateCostate, PrePostViolation
from .hamiltonian import HamiltonianModel
from .ode import rk4, rk4_backward, rk4_step
from .report import VerificationReport, dumps

BLOWUP_THRESHOLD = 1e8
INVERTIBILITY_FLOOR = 1e-10
ASYMMETRY_TRIPWIRE = 1e-6
BISECTION_STEPS = 20

TERMINAL = "terminal"
INITIAL = "initial"

COMPLETE = "complete"
BLOWUP = "blowup"


def opnorm(A) -> float:
    """Largest singular value; inf for non-finite input."""
    if not np.all(np.isfinite(A)):
        return float("inf")
    return float(np.linalg.norm(A, 2))


class ArcBlocks:
    """Hessian blocks of H along an arc.

    Values at nodes and midpoints (the RK4 stage times) are cached; other
    times are served by linear interpolation of the stored (x, p) samples.
    """

    def __init__(self, arc: Arc, model: HamiltonianModel, sign: float = 1.0):
        if np.any(arc.costate_norms() == 0):
            raise DegenerateCostate("Hessian blocks need a nonvanishing costate")
        self.arc = arc
        self.model = model
        self.sign = sign
        self._half = 0.5 * arc.dt
        self._cache = {}

    def __call__(self, t):
        u = (t - self.arc.t0) / self._half
        k = int(round(u))
        if abs(u - k) < 1e-7:
            hit = self._cache.get(k)
            if hit is None:
                hit = self._eval(self.arc.t0 + k * self._half)
                self._cache[k] = hit
            return hit
        return self._eval(t)

    def _eval(self, t):
        x, p = self.arc.at(t)
        Hxx, Hxp, Hpx, Hpp = self.model.hess(x, p)
        s = self.sign
        return s * Hxx, s * Hxp, s * Hpx, s * Hpp

    def negated(self):
        """Blocks of -H, as used by the time-reversed Riccati equation."""
        return ArcBlocks(self.arc, self.model, -self.sign)


def variational_rhs(blocks):
    def f(t, y):
        Hxx, Hxp, Hpx, Hpp = blocks(t)
        X, P = y[0], y[1]
        return np.stack([Hxp @ X + Hpp @ P, -(Hxx @ X + Hpx @ P)])
    return f


def riccati_rhs(blocks, quadratic=True):
    def f(t, R):
        Hxx, Hxp, Hpx, Hpp = blocks(t)
        out = Hpx @ R + R @ Hxp + Hxx
        if quadratic:
            out = out + R @ Hpp @ R
        return -out
    return f


@dataclass(frozen=True)
class VariationalSolution:
    times: np.ndarray
    X: np.ndarray
    P: np.ndarray
    anchor: str  # "terminal_identity" or "initial_identity"
    rhs: Callable | None = field(default=None, repr=False, compare=False)

    @property
    def anchor_index(self):
        return -1 if self.anchor == "terminal_identity" else 0

    def symplectic_drift(self) -> float:
        W = np.einsum("kji,kjl->kil", self.X, self.P)
        W = W - np.transpose(W, (0, 2, 1))
        return float(np.max(np.abs(W - W[self.anchor_index])))


@dataclass(frozen=True)
class RiccatiSolution:
    times: np.ndarray
    R: np.ndarray
    status: str
    t_star: float | None = None
    source: str = "direct_integration"

    def norms(self):
        return np.array([opnorm(r) for r in self.R])

    def asymmetry(self) -> float:
        diff = np.abs(self.R - np.transpose(self.R, (0, 2, 1))).max(axis=(1, 2))
        return float(np.max(diff / (1 + self.norms())))

    def at(self, t):
        """R(t) by linear interpolation between stored nodes."""
        ts = self.times
        lo, hi = min(ts[0], ts[-1]), max(ts[0], ts[-1])
        if not lo - 1e-12 <= t <= hi + 1e-12:
            raise ValueError(f"t={t} outside the stored Riccati range [{lo}, {hi}]")
        i = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2))
        a = min(max((t - ts[i]) / (ts[i + 1] - ts[i]), 0.0), 1.0)
        return (1 - a) * self.R[i] + a * self.R[i + 1]


@dataclass
class ConjugateTimeReport:
    t_c: float | None
    det_X_trace: list
    min_singular_value_at_tc: float
    r_norm_growth: list
    det_at_tc: float | None = None

    def to_dict(self):
        return {
            "t_c": self.t_c,
            "det_at_tc": self.det_at_tc,
            "min_singular_value_at_tc": self.min_singular_value_at_tc,
            "det_X_trace": self.det_X_trace,
            "r_norm_growth": self.r_norm_growth,
        }


def _sym(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    return A


def integrate_variational(arc: Arc, model: HamiltonianModel, terminal_hessian=None,
                          anchor: str = TERMINAL, initial_hessian=None) -> VariationalSolution:
    """Integrate (X, P) along ``arc``.

    ``anchor="terminal"``: X(T) = I, P(T) = -terminal_hessian, integrated backward.
    ``anchor="initial"``: X(t0) = I, P(t0) = -initial_hessian, integrated forward.
    """
    n = model.dim
    blocks = ArcBlocks(arc, model)
    f = variational_rhs(blocks)
    if anchor == TERMINAL:
        H = _sym(terminal_hessian)
        y = rk4_backward(f, np.stack([np.eye(n), -H]), arc.times)
        tag = "terminal_identity"
    elif anchor == INITIAL:
        H = _sym(initial_hessian if initial_hessian is not None else terminal_hessian)
        y = rk4(f, np.stack([np.eye(n), -H]), arc.times)
        tag = "initial_identity"
    else:
        raise ValueError(f"unknown anchor {anchor!r}")
    return VariationalSolution(arc.times, y[:, 0].copy(), y[:, 1].copy(), tag, rhs=f)


def _riccati_march(f, R_b, times, anchor, threshold):
    state = {"blowup": None}
    n_nodes = len(times)

    def post(i, R):
        if not np.all(np.isfinite(R)):
            R[...] = np.nan_to_num(R, nan=np.inf, posinf=np.inf, neginf=-np.inf)
            state["blowup"] = i
            return True
        nrm = opnorm(R)
        asym = float(np.max(np.abs(R - R.T)))
        if asym > ASYMMETRY_TRIPWIRE * (1 + nrm):
            raise AsymmetryDrift(f"|R - R^T| = {asym:.3g} at node {i}")
        R[...] = 0.5 * (R + R.T)
        if nrm > threshold:
            state["blowup"] = i
            return True
        return False

    with np.errstate(over="ignore", invalid="ignore"):
        if anchor == TERMINAL:
            out = rk4_backward(f, R_b, times, callback=post)
            kept = times[n_nodes - len(out):]
        else:
            out = rk4(f, R_b, times, callback=post)
            kept = times[: len(out)]
    i = state["blowup"]
    if i is None:
        return kept, out, COMPLETE, None
    return kept, out, BLOWUP, float(times[i])


def integrate_riccati_direct(arc: Arc, model: HamiltonianModel, boundary_R,
                             anchor: str = TERMINAL,
                             threshold: float = BLOWUP_THRESHOLD) -> RiccatiSolution:
    """RK4 on the Riccati flow from the chosen anchor, stopping at blow-up."""
    R_b = _sym(boundary_R)
    if np.max(np.abs(R_b - R_b.T)) > 1e-12 * (1 + opnorm(R_b)):
        raise ValueError("boundary_R must be symmetric")
    if anchor not in (TERMINAL, INITIAL):
        raise ValueError(f"unknown anchor {anchor!r}")
    f = riccati_rhs(ArcBlocks(arc, model))
    times, R, status, t_star = _riccati_march(f, R_b, arc.times, anchor, threshold)
    return RiccatiSolution(times, R, status, t_star, "direct_integration")


def integrate_riccati_blocks(blocks, times, boundary_R, anchor=TERMINAL,
                             threshold=BLOWUP_THRESHOLD, quadratic=True) -> RiccatiSolution:
    """Lower-level entry point taking any ``blocks(t)`` provider."""
    f = riccati_rhs(blocks, quadratic)
    times, R, status, t_star = _riccati_march(f, _sym(boundary_R), np.asarray(times),
                                              anchor, threshold)
    return RiccatiSolution(times, R, status, t_star, "direct_integration")


def riccati_from_variational(vs: VariationalSolution,
                             threshold: float = BLOWUP_THRESHOLD) -> RiccatiSolution:
    """R = P X^{-1} from the anchor outward, truncated where X stops being invertible.

    A node counts as singular when the smallest singular value of X falls to
    INVERTIBILITY_FLOOR * |X|, when det X has changed sign since the anchor
    (X passed through a singular matrix between nodes), or when |R| exceeds
    ``threshold``.
    """
    order = range(len(vs.times) - 1, -1, -1) if vs.anchor == "terminal_identity" \
        else range(len(vs.times))
    det0 = np.linalg.det(vs.X[vs.anchor_index])
    kept = []
    t_star = None
    for i in order:
        X, P = vs.X[i], vs.P[i]
        s = np.linalg.svd(X, compute_uv=False)
        if s[-1] <= INVERTIBILITY_FLOOR * s[0] or np.sign(np.linalg.det(X)) != np.sign(det0):
            t_star = float(vs.times[i])
            break
        R = np.linalg.solve(X.T, P.T).T
        if opnorm(R) > threshold:
            t_star = float(vs.times[i])
            break
        kept.append((i, 0.5 * (R + R.T)))
    kept.sort(key=lambda item: item[0])
    idx = [i for i, _ in kept]
    R = np.array([r for _, r in kept])
    status = COMPLETE if t_star is None else BLOWUP
    return RiccatiSolution(vs.times[idx], R, status, t_star, "quotient_PX_inverse")


def _advance(rhs, t_from, y, t_to, substeps=8):
    dt = (t_to - t_from) / substeps
    t = t_from
    for _ in range(substeps):
        y = rk4_step(rhs, t, y, dt)
        t += dt
    return y


def detect_conjugate_time(vs: VariationalSolution) -> ConjugateTimeReport:
    """Scan det X outward from the anchor and bisect the first zero crossing."""
    n_nodes = len(vs.times)
    order = list(range(n_nodes - 1, -1, -1)) if vs.anchor == "terminal_identity" \
        else list(range(n_nodes))
    dets = np.array([np.linalg.det(X) for X in vs.X])
    a0 = order[0]
    scale = abs(dets[a0])
    trace = [(float(vs.times[i]), float(dets[i])) for i in order]
    growth = []
    hit = None
    for j, i in enumerate(order):
        d = dets[i]
        if np.sign(d) != np.sign(dets[a0]) or abs(d) < 1e-12 * scale:
            hit = j
            break
        R = np.linalg.solve(vs.X[i].T, vs.P[i].T).T
        growth.append((float(vs.times[i]), opnorm(R)))
    if hit is None:
        return ConjugateTimeReport(None, trace, float("nan"), growth)

    i_b = order[hit]
    if hit == 0 or vs.rhs is None:
        t_c = float(vs.times[i_b])
        X_c = vs.X[i_b]
    else:
        i_a = order[hit - 1]
        t_a = float(vs.times[i_a])
        y_a = np.stack([vs.X[i_a], vs.P[i_a]])
        sign_a = np.sign(dets[i_a])
        lo, hi = t_a, float(vs.times[i_b])
        y_lo = y_a
        if np.sign(dets[i_b]) == sign_a:
            # touched zero without crossing: the node itself is the best estimate
            lo = hi
            y_lo = np.stack([vs.X[i_b], vs.P[i_b]])
        else:
            for _ in range(BISECTION_STEPS):
                mid = 0.5 * (lo + hi)
                y_mid = _advance(vs.rhs, lo, y_lo, mid)
                if np.sign(np.linalg.det(y_mid[0])) == sign_a:
                    lo, y_lo = mid, y_mid
                else:
                    hi = mid
        t_c = 0.5 * (lo + hi)
        X_c = _advance(vs.rhs, lo, y_lo, t_c)[0] if t_c != lo else y_lo[0]
    sv = float(np.linalg.svd(X_c, compute_uv=False)[-1])
    return ConjugateTimeReport(t_c, trace, sv, growth, float(np.linalg.det(X_c)))


def comparison_bound(arc: Arc, model: HamiltonianModel, boundary_R, anchor: str = TERMINAL,
                     label: str = "scenario") -> VerificationReport:
    """Check the ordering between the Riccati solution R and the linear solution Q.

    With the quadratic term dropped, Q solves Q' + H_px Q + Q H_xp + H_xx = 0 with
    the same boundary data. When H_pp >= 0 the terminal-anchored flow satisfies
    Q <= R on (t_c, T]; for an initial anchor the ordering reverses (R <= Q), since
    the quadratic term then acts in the opposite time direction.
    """
    blocks = ArcBlocks(arc, model)
    worst = 0.0
    for t in arc.times:
        worst = min(worst, float(np.linalg.eigvalsh(blocks(t)[3]).min()))
    if worst < -1e-9:
        raise PrePostViolation(f"H_pp is indefinite along the arc (min eig {worst:.3g})")
    R = integrate_riccati_blocks(blocks, arc.times, boundary_R, anchor)
    Q = integrate_riccati_blocks(blocks, arc.times, boundary_R, anchor, quadratic=False)
    rep = VerificationReport(label=label, check="comparison_bound",
                             premise="H_pp >= 0 along the arc (checked)")
    qmap = {float(t): q for t, q in zip(Q.times, Q.R)}
    margins = []
    for t, r in zip(R.times, R.R):
        q = qmap.get(float(t))
        if q is None or R.status == BLOWUP and float(t) == R.t_star:
            continue
        diff = r - q if anchor == TERMINAL else q - r
        m = float(np.linalg.eigvalsh(0.5 * (diff + diff.T)).min())
        margins.append((float(t), m))
        rep.add(t, -m, 1e-8, "min_eig_margin")
    rep.fitted_constants.update(min_margin=min(m for _, m in margins) if margins else None,
                                riccati_status=R.status, t_star=R.t_star)
    rep.details["margins"] = margins
    return rep.finalize()


# ---------------------------------------------------------------------------
# export

def write_matrix_csv(path, times, mats, prefix):
    n = mats.shape[1]
    header = ["t"] + [f"{prefix}_{i + 1}{j + 1}" for i in range(n) for j in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, M in zip(times, mats):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in M.ravel()])


def write_variational_csv(vs: VariationalSolution, path):
    n = vs.X.shape[1]
    header = (["t"] + [f"X_{i + 1}{j + 1}" for i in range(n) for j in range(n)]
              + [f"P_{i + 1}{j + 1}" for i in range(n) for j in range(n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, X, P in zip(vs.times, vs.X, vs.P):
            w.writerow([f"{v:.17g}" for v in (t, *X.ravel(), *P.ravel())])


def riccati_summary(sol: RiccatiSolution, conj: ConjugateTimeReport | None = None,
                    margins: VerificationReport | None = None) -> dict:
    out = {"status": sol.status, "t_star": sol.t_star, "source": sol.source,
           "t_c": None if conj is None else conj.t_c, "margins": None}
    if margins is not None:
        out["margins"] = {"min": margins.fitted_constants.get("min_margin"),
                          "verdict": margins.verdict}
    return out


def write_riccati_summary(path, summary: dict):
    with open(path, "w") as fh:
        fh.write(dumps(summary))
