"""Hamiltonian models H(x, p) = sup_{v in F(x)} <v, p> and terminal costs.

Two families come with closed-form derivatives:

* ``interval_box``: F(x) = [-r, r]^n, so H(x, p) = r * sum_i |p_i|.
* ``affine_control``: F(x) = h(x) + g(x) B_m, so H(x, p) = <p, h(x)> + |g(x)^T p|.
  Derivatives of h and g come from callbacks when supplied and from central
  finite differences otherwise.

Hessian blocks follow the linearisation of the characteristic system:
``H_xp[i, j] = d(grad_p H)_i / dx_j`` and ``H_px[i, j] = d(grad_x H)_i / dp_j``,
so that ``H_px == H_xp.T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ModelInvalid, NonsmoothPoint
from .report import VerificationReport

FD_STEP = 1e-5
FD2_STEP = 1e-4

FAMILIES = ("interval_box", "affine_control", "custom")
SMOOTHNESS = ("C2", "C2_1")
REGULARITY = ("Lipschitz", "C1_1", "C2", "C2_m")


def guard_radius(p) -> float:
    """Radius of the cone around p = 0 inside which derivatives are refused."""
    return 1e-9 * (1.0 + float(np.linalg.norm(p)))


@dataclass(frozen=True)
class HamiltonianModel:
    dim: int
    eval: Callable
    grad_p: Callable
    grad_x: Callable
    hess: Callable
    growth_gamma: float
    smoothness: str = "C2"
    family_tag: str = "custom"
    # uniform bound on |v| for v in F(x), when one exists
    speed_bound: float | None = None
    x_independent: bool = False
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ModelInvalid("dim must be >= 1")
        if self.smoothness not in SMOOTHNESS:
            raise ModelInvalid(f"unknown smoothness {self.smoothness!r}")
        if self.family_tag not in FAMILIES:
            raise ModelInvalid(f"unknown family {self.family_tag!r}")

    def support_point(self, x, direction):
        """A velocity of F(x) maximising <v, direction>."""
        return self.grad_p(x, direction)


@dataclass(frozen=True)
class TerminalCost:
    value: Callable
    grad: Callable
    hess: Callable
    regularity: str = "C2"
    holder_m: float | None = None
    semiconcave: bool = False

    def __post_init__(self):
        if self.regularity not in REGULARITY:
            raise ValueError(f"unknown regularity {self.regularity!r}")
        if self.regularity == "C2_m" and not (self.holder_m and 0 < self.holder_m <= 1):
            raise ValueError("C2_m regularity needs holder_m in (0, 1]")


@dataclass(frozen=True)
class ControlScenario:
    model: HamiltonianModel
    cost: TerminalCost
    t0: float
    T: float
    x0: np.ndarray
    label: str = "scenario"
    terminal_state: np.ndarray | None = None

    def __post_init__(self):
        if not self.T - self.t0 > 0:
            raise ValueError(f"horizon must be positive, got t0={self.t0}, T={self.T}")
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.model.dim,):
            raise ValueError(f"x0 has length {x0.size}, model dim is {self.model.dim}")
        object.__setattr__(self, "x0", x0)
        if self.terminal_state is not None:
            z = np.atleast_1d(np.asarray(self.terminal_state, dtype=float))
            if z.shape != (self.model.dim,):
                raise ValueError("terminal_state has the wrong length")
            object.__setattr__(self, "terminal_state", z)


# ---------------------------------------------------------------------------
# terminal costs

def quadratic_cost(A, b=None, c=0.0, semiconcave=True) -> TerminalCost:
    """phi(z) = 1/2 z^T A z + b^T z + c."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    b = np.zeros(n) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    c = float(c)

    def value(z):
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ A @ z + b @ z + c)

    def grad(z):
        return A @ np.asarray(z, dtype=float) + b

    def hess(z):
        return A.copy()

    return TerminalCost(value, grad, hess, regularity="C2", semiconcave=semiconcave)


# ---------------------------------------------------------------------------
# finite differences

def _fd_step(x, base):
    return base * (1.0 + float(np.linalg.norm(x)))


def fd_jacobian(f, x, step=None):
    """Central-difference Jacobian; output[..., k] = d f / d x_k."""
    x = np.asarray(x, dtype=float)
    d = _fd_step(x, FD_STEP) if step is None else step
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = d
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * d))
    return np.stack(cols, axis=-1)


def fd_gradient(f, x, step=None):
    return fd_jacobian(lambda y: np.asarray(f(y), dtype=float), x, step)


# ---------------------------------------------------------------------------
# interval box family

def make_interval_box_model(dim: int, radius: float) -> HamiltonianModel:
    """F(x) = [-radius, radius]^dim, H(x, p) = radius * sum |p_i|."""
    if dim < 1:
        raise ModelInvalid("dim must be >= 1")
    if not radius > 0:
        raise ModelInvalid("radius must be positive")
    r = float(radius)

    def _check(p):
        if np.any(np.abs(p) < guard_radius(p)):
            raise NonsmoothPoint(f"box Hamiltonian is not differentiable at p={p}")

    def value(x, p):
        return r * float(np.sum(np.abs(p)))

    def grad_p(x, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        _check(p)
        return r * np.sign(p)

    def grad_x(x, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        _check(p)
        return np.zeros(dim)

    def hess(x, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        _check(p)
        z = np.zeros((dim, dim))
        return z, z.copy(), z.copy(), z.copy()

    speed = r * np.sqrt(dim)
    return HamiltonianModel(
        dim=dim, eval=value, grad_p=grad_p, grad_x=grad_x, hess=hess,
        growth_gamma=speed, smoothness="C2_1", family_tag="interval_box",
        speed_bound=speed, x_independent=True, params={"radius": r},
    )


# ---------------------------------------------------------------------------
# affine control family

def make_affine_control_model(h_field, g_field, dim, m, *, h_jac=None, h_hess=None,
                              g_jac=None, g_hess=None, growth_gamma=None,
                              probe_points=None, x_independent=False,
                              speed_bound=None, seed=0) -> HamiltonianModel:
    """H(x, p) = <p, h(x)> + |g(x)^T p| for the control set U = closed unit ball of R^m.

    ``h_jac(x)[i, k] = dh_i/dx_k``, ``h_hess(x)[i, k, l] = d2 h_i/dx_k dx_l``,
    ``g_jac(x)[a, b, k] = dg_ab/dx_k``, ``g_hess(x)[a, b, k, l]``. Missing
    callbacks are replaced by central differences. ``g`` must have full rank
    n on every probe point.
    """
    if m < dim:
        raise ModelInvalid(f"need m >= n, got m={m}, n={dim}")

    def h(x):
        return np.atleast_1d(np.asarray(h_field(x), dtype=float))

    def g(x):
        return np.asarray(g_field(x), dtype=float).reshape(dim, m)

    if h_jac is None:
        def h_jac(x):
            return fd_jacobian(h, x)
    if g_jac is None:
        def g_jac(x):
            return fd_jacobian(g, x)
    if h_hess is None:
        def h_hess(x):
            return fd_jacobian(h_jac, x, _fd_step(x, FD2_STEP))
    if g_hess is None:
        def g_hess(x):
            return fd_jacobian(g_jac, x, _fd_step(x, FD2_STEP))

    def _split(x, p):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p = np.atleast_1d(np.asarray(p, dtype=float))
        G = g(x)
        s = G.T @ p
        nu = float(np.linalg.norm(s))
        if nu < guard_radius(p):
            raise NonsmoothPoint(f"|g(x)^T p| vanishes at x={x}, p={p}")
        return x, p, G, s, nu

    def value(x, p):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return float(p @ h(x) + np.linalg.norm(g(x).T @ p))

    def grad_p(x, p):
        x, p, G, s, nu = _split(x, p)
        return h(x) + G @ (s / nu)

    def _S(x, p):
        # S[b, k] = ((dg/dx_k)^T p)_b
        return np.einsum("abk,a->bk", g_jac(x), p)

    def grad_x(x, p):
        x, p, G, s, nu = _split(x, p)
        w = s / nu
        return h_jac(x).T @ p + _S(x, p).T @ w

    def hess(x, p):
        x, p, G, s, nu = _split(x, p)
        w = s / nu
        proj = np.eye(m) - np.outer(w, w)
        S = _S(x, p)
        gj = g_jac(x)
        Hpp = G @ proj @ G.T / nu
        Hxp = h_jac(x) + np.einsum("iak,a->ik", gj, w) + G @ proj @ S / nu
        Hxx = (np.einsum("ikl,i->kl", h_hess(x), p)
               + np.einsum("iakl,i,a->kl", g_hess(x), p, w)
               + S.T @ proj @ S / nu)
        Hxx = 0.5 * (Hxx + Hxx.T)
        Hpp = 0.5 * (Hpp + Hpp.T)
        return Hxx, Hxp, Hxp.T.copy(), Hpp

    rng = np.random.default_rng(seed)
    if probe_points is None:
        probe_points = rng.uniform(-1.0, 1.0, size=(16, dim))
    sup_speed = 0.0
    gamma_est = 0.0
    for x in np.atleast_2d(probe_points):
        G = g(x)
        if np.linalg.matrix_rank(G) < dim:
            raise ModelInvalid(f"g(x) is rank deficient at x={x}")
        speed = np.linalg.norm(h(x)) + np.linalg.norm(G, 2)
        sup_speed = max(sup_speed, speed)
        gamma_est = max(gamma_est, speed / (1.0 + np.linalg.norm(x)))
    if growth_gamma is None:
        growth_gamma = gamma_est

    return HamiltonianModel(
        dim=dim, eval=value, grad_p=grad_p, grad_x=grad_x, hess=hess,
        growth_gamma=float(growth_gamma), smoothness="C2", family_tag="affine_control",
        speed_bound=speed_bound, x_independent=x_independent, params={"m": m},
    )


def make_ball_model(dim: int, radius: float = 1.0) -> HamiltonianModel:
    """F(x) = closed ball of given radius: affine family with h = 0, g = radius * I."""
    r = float(radius)
    if not r > 0:
        raise ModelInvalid("radius must be positive")
    zeros = np.zeros(dim)
    eye = r * np.eye(dim)
    return make_affine_control_model(
        lambda x: zeros, lambda x: eye, dim, dim,
        h_jac=lambda x: np.zeros((dim, dim)),
        h_hess=lambda x: np.zeros((dim, dim, dim)),
        g_jac=lambda x: np.zeros((dim, dim, dim)),
        g_hess=lambda x: np.zeros((dim, dim, dim, dim)),
        growth_gamma=r, x_independent=True, speed_bound=r,
    )


# ---------------------------------------------------------------------------
# structural validation

def validate_model(model: HamiltonianModel, sample_count: int = 100, radius: float = 1.0,
                   seed: int = 0, label: str = "model") -> VerificationReport:
    """Sample-based check of the structural hypotheses on H.

    Reports one node per check holding the worst residual seen. The
    semiconvexity constant c of the midpoint surrogate
    ``H(x+z,p) + H(x-z,p) - 2H(x,p) >= -c|z|^2`` is estimated, not assumed,
    and returned in ``fitted_constants``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    n = model.dim
    rep = VerificationReport(label=label, check="validate_model",
                             premise=f"{sample_count} samples, |x|,|z| <= {radius}, |p| = 1")

    def ball(k):
        d = rng.normal(size=(k, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * radius * rng.uniform(0, 1, size=(k, 1)) ** (1.0 / n)

    xs = ball(sample_count)
    zs = ball(sample_count)
    ps = rng.normal(size=(sample_count, n))
    ps /= np.linalg.norm(ps, axis=1, keepdims=True)

    worst = dict(homogeneity=0.0, euler=0.0, convexity=0.0, psd=0.0, degeneracy=0.0,
                 transpose=0.0)
    c_semi = 0.0
    lip_gp = 0.0
    skipped = 0
    for x, z, p in zip(xs, zs, ps):
        Hv = model.eval(x, p)
        for lam in (0.5, 2.0, 10.0):
            r = abs(model.eval(x, lam * p) - lam * Hv) / (lam * (1 + abs(Hv)))
            worst["homogeneity"] = max(worst["homogeneity"], r)
        q = rng.normal(size=n)
        mid = model.eval(x, 0.5 * (p + q)) - 0.5 * (Hv + model.eval(x, q))
        worst["convexity"] = max(worst["convexity"], mid / (1 + abs(Hv)))
        zn2 = float(z @ z)
        if zn2 > 0:
            excess = model.eval(x + z, p) + model.eval(x - z, p) - 2 * Hv
            c_semi = max(c_semi, -excess / zn2)
        try:
            gp = model.grad_p(x, p)
            Hxx, Hxp, Hpx, Hpp = model.hess(x, p)
            gp_shift = model.grad_p(x + z, p)
        except NonsmoothPoint:
            skipped += 1
            continue
        worst["euler"] = max(worst["euler"], abs(Hv - gp @ p) / (1 + abs(Hv)))
        nrm = np.linalg.norm(Hpp, 2)
        worst["psd"] = max(worst["psd"], -float(np.linalg.eigvalsh(Hpp).min()))
        if nrm > 0:
            worst["degeneracy"] = max(worst["degeneracy"], np.linalg.norm(Hpp @ p) / nrm)
        worst["transpose"] = max(worst["transpose"], float(np.abs(Hpx - Hxp.T).max()))
        if zn2 > 0:
            lip_gp = max(lip_gp, np.linalg.norm(gp_shift - gp) / np.sqrt(zn2))

    rep.add(None, worst["homogeneity"], 1e-9, "homogeneity")
    rep.add(None, worst["euler"], 1e-9, "euler_identity")
    rep.add(None, worst["convexity"], 1e-12, "convexity_in_p")
    rep.add(None, worst["psd"], 1e-9, "Hpp_psd")
    rep.add(None, worst["degeneracy"], 1e-8, "Hpp_p_zero")
    rep.add(None, worst["transpose"], 1e-12, "Hpx_eq_Hxp_T")
    rep.fitted_constants.update(semiconvexity_c=max(c_semi, 0.0),
                                grad_p_lipschitz_x=lip_gp, nonsmooth_samples=skipped)
    return rep.finalize()
