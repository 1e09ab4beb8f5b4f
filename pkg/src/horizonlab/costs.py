"""Running costs ell = ell1(t,x) + ell2(t,x,u) and horizon cost functionals.

ell1 is the control-independent part (nonnegative, may take the value +inf to
encode a state constraint through an indicator term); ell2 is the
control-dependent part (nonnegative, convex in u by declaration).  The horizon
functional is the Lagrange integral of ell along a trajectory under a step
control, evaluated with adaptive quadrature split at every breakpoint.

Extended-real arithmetic: +inf is absorbing.  Quadrature short-circuits when
the integrand hits +inf on a set of positive sampled measure; a single
isolated +inf sample (boundary grazing) is ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .dynamics import Trajectory
from .signals import ControlSignal

__all__ = [
    "GrowthBound",
    "MKDominator",
    "RunningCost",
    "evaluate_cost",
    "check_C1_growth",
    "check_mK_domination",
    "GrowthReport",
    "DominationReport",
]

_FD_STEP = float(np.cbrt(np.finfo(float).eps))


@dataclass(frozen=True)
class GrowthBound:
    """Coercivity data ell2(t,x,u) >= alpha |u|^p - gamma(t), gamma integrable."""

    alpha: float
    gamma: Callable[[float], float]
    gamma_l1: float  # integral of |gamma| over (0, inf)


@dataclass(frozen=True)
class MKDominator:
    """Integrable bound m_K(t) >= ell2(t, x, u_star) valid for x in a compact box.

    ``fn(t, lo, hi)`` returns the bound for the box [lo, hi]; it must be
    integrable on (0, inf) for the domination hypothesis to hold.
    """

    fn: Callable[[float, np.ndarray, np.ndarray], float]


@dataclass(eq=False)
class RunningCost:
    """Decomposed running cost with optional analytic gradients.

    ``grad_x`` is d(ell)/dx and ``grad_u`` is d(ell2)/du; central finite
    differences are used when they are not supplied.  ``sign_indefinite``
    marks costs outside the nonnegative decomposition class (kept runnable as
    counterexample material, but excluded from the hypothesis checklist).
    """

    ell1: Callable[[float, np.ndarray], float]
    ell2: Callable[[float, np.ndarray, np.ndarray], float]
    grad_x: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None
    grad_u: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None
    growth: GrowthBound | None = None
    mK: MKDominator | None = None
    sign_indefinite: bool = False
    time_breakpoints: tuple[float, ...] = ()

    def ell(self, t: float, x: np.ndarray, u: np.ndarray) -> float:
        v1 = float(self.ell1(t, x))
        if math.isinf(v1):
            return math.inf
        v2 = float(self.ell2(t, x, u))
        if math.isinf(v2):
            return math.inf
        return v1 + v2

    def ell_grad_x(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.grad_x is not None:
            return np.atleast_1d(np.asarray(self.grad_x(t, x, u), float))
        g = np.empty_like(x)
        for i in range(x.size):
            h = _FD_STEP * (1.0 + abs(float(x[i])))
            xp = x.copy(); xp[i] += h
            xm = x.copy(); xm[i] -= h
            g[i] = (self.ell(t, xp, u) - self.ell(t, xm, u)) / (2 * h)
        return g

    def ell_grad_u(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.grad_u is not None:
            return np.atleast_1d(np.asarray(self.grad_u(t, x, u), float))
        g = np.empty_like(u)
        for i in range(u.size):
            h = _FD_STEP * (1.0 + abs(float(u[i])))
            up = u.copy(); up[i] += h
            um = u.copy(); um[i] -= h
            g[i] = (float(self.ell2(t, x, up)) - float(self.ell2(t, x, um))) / (2 * h)
        return g


def _segment_edges(cost: RunningCost, traj: Trajectory, u: ControlSignal, T: float) -> np.ndarray:
    cuts = {0.0, T}
    cuts.update(float(b) for b in u.interior_breakpoints(T))
    cuts.update(float(b) for b in cost.time_breakpoints if 0.0 < b < T)
    cuts.update(float(b) for b in traj.segment_boundaries() if 0.0 < b < T)
    return np.array(sorted(cuts))


def evaluate_cost(
    cost: RunningCost,
    traj: Trajectory,
    u: ControlSignal,
    T: float,
    quad_tol: float = 1e-10,
) -> float:
    """Adaptive quadrature of ell(t, x(t), u(t)) over [0, T].

    Splits at control/coefficient breakpoints.  Returns +inf when the
    integrand is +inf on a set of positive sampled measure (confirmed by an
    8x denser scan, so an isolated boundary touch does not trigger it).
    """
    if traj.t_end < T - 1e-9:
        raise ValueError(f"trajectory covers [0, {traj.t_end:.6g}] but T={T:.6g}")

    def integrand(t: float) -> float:
        return cost.ell(t, traj.state(t), u.evaluate(t))

    edges = _segment_edges(cost, traj, u, T)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo <= 1e-15:
            continue
        probe = np.linspace(lo, hi, 33)
        vals = np.array([integrand(t) for t in probe])
        if np.any(np.isinf(vals)):
            dense = np.linspace(lo, hi, 257)
            hits = int(np.sum(np.isinf([integrand(t) for t in dense])))
            if hits >= 2:
                return math.inf
        val, _err = quad(
            integrand, lo, hi, epsabs=quad_tol, epsrel=max(quad_tol, 1e-12), limit=200
        )
        if math.isinf(val) or math.isnan(val):
            return math.inf
        total += val
    return total


@dataclass(frozen=True)
class GrowthReport:
    ok: bool
    worst_margin: float
    witness: tuple[float, np.ndarray, np.ndarray] | None


def check_C1_growth(
    cost: RunningCost,
    p: float,
    t_grid,
    x_grid,
    u_grid,
    tol: float = 1e-9,
) -> GrowthReport:
    """Grid check of ell2(t,x,u) >= alpha |u|^p - gamma(t).

    Applies to the finite-p regime only; with p = inf the compactness of the
    control set plays this role instead, and the check is inapplicable.
    """
    if math.isinf(p):
        raise ValueError("growth check is inapplicable for p = inf (use a compact U)")
    if cost.growth is None:
        raise ValueError("cost has no declared growth bound")
    alpha, gamma = cost.growth.alpha, cost.growth.gamma
    worst = math.inf
    witness = None
    for t in np.atleast_1d(t_grid):
        g = float(gamma(float(t)))
        for x in x_grid:
            xv = np.atleast_1d(np.asarray(x, float))
            for uu in u_grid:
                uv = np.atleast_1d(np.asarray(uu, float))
                margin = float(cost.ell2(float(t), xv, uv)) - (
                    alpha * float(np.linalg.norm(uv)) ** p - g
                )
                if margin < worst:
                    worst = margin
                    witness = (float(t), xv, uv)
    return GrowthReport(ok=worst >= -tol, worst_margin=worst, witness=witness)


@dataclass(frozen=True)
class DominationReport:
    ok: bool
    pointwise_ok: bool
    worst_gap: float
    tail_integrals: dict
    tail_ok: bool


def check_mK_domination(
    cost: RunningCost,
    box: tuple,
    t_grid,
    u_star,
    tail_starts: tuple[float, ...] = (10.0, 20.0, 40.0),
    tol: float = 1e-9,
) -> DominationReport:
    """Check ell2(t, x, u_star) <= m_K(t) on a grid and that the m_K tail vanishes.

    The tail evidence integrates m_K over growing windows [T, 4T]; the window
    integrals must decrease to (numerical) zero for integrability evidence.
    """
    if cost.mK is None:
        raise ValueError("cost has no m_K dominator descriptor")
    lo = np.atleast_1d(np.asarray(box[0], float))
    hi = np.atleast_1d(np.asarray(box[1], float))
    us = np.atleast_1d(np.asarray(u_star, float))
    n = lo.size
    per_axis = 21 if n == 1 else max(5, int(round(41 ** (1.0 / n))))
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)

    worst = -math.inf
    for t in np.atleast_1d(t_grid):
        bound = float(cost.mK.fn(float(t), lo, hi))
        for x in points:
            gap = float(cost.ell2(float(t), x, us)) - bound
            worst = max(worst, gap)
    pointwise_ok = worst <= tol

    tails = {}
    for T0 in tail_starts:
        val, _ = quad(lambda t: float(cost.mK.fn(t, lo, hi)), T0, 4.0 * T0, limit=200)
        tails[float(T0)] = val
    vals = [tails[k] for k in sorted(tails)]
    tail_ok = all(b <= a + 1e-12 for a, b in zip(vals[:-1], vals[1:])) and vals[-1] <= max(
        1e-6, 1e-3 * (abs(vals[0]) + 1e-12)
    )
    return DominationReport(
        ok=pointwise_ok and tail_ok,
        pointwise_ok=pointwise_ok,
        worst_gap=worst,
        tail_integrals=tails,
        tail_ok=tail_ok,
    )
