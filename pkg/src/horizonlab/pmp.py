"""Pontryagin analysis for costs affine in the control on a box.

For H(t, x, p, u) = ell(t, x, u) + p . (a(t,x) + b(t,x) u) the adjoint is
integrated backward from the transversality condition p(T) = 0, and the
switching function phi = dH/du = c(t, x) + b(t, x)^T p classifies extremal
pieces: phi > 0 forces the lower vertex, phi < 0 the upper vertex, and
persistent phi = 0 signals a singular arc, where the control is fixed by
higher-order conditions the problem declares explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .dynamics import ControlAffineSystem, IntegrationError, Trajectory, _Segment
from .signals import ControlSignal

__all__ = [
    "CostateTrajectory",
    "SwitchingFunction",
    "ExtremalTols",
    "ExtremalReport",
    "NotAffineError",
    "adjoint_rhs",
    "costate_integrate",
    "switching_function",
    "verify_extremal",
]


class NotAffineError(ValueError):
    """The cost is not (declared) affine in u; switching analysis is inapplicable."""


def adjoint_rhs(problem, t: float, p: np.ndarray, x: np.ndarray, u_val: np.ndarray) -> np.ndarray:
    """p' = -d(ell)/dx - (d(a + b u)/dx)^T p along a given state/control."""
    jac = problem.system.rhs_jac_x(t, x, u_val)
    lx = problem.cost.ell_grad_x(t, x, u_val)
    return -lx - jac.T @ p


@dataclass(eq=False)
class CostateTrajectory:
    """Adjoint arc p(t) on [0, T], integrated backward from p(T) = 0."""

    ts: np.ndarray
    ps: np.ndarray
    segments: list[_Segment]
    T: float
    _starts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._starts = np.array([s.t0 for s in self.segments])

    def costate(self, t):
        tt = np.asarray(t, dtype=float)
        scalar = tt.ndim == 0
        tt = np.atleast_1d(tt)
        if np.any(tt < -1e-12) or np.any(tt > self.T + 1e-9):
            raise ValueError(f"time outside costate domain [0, {self.T}]")
        tt = np.clip(tt, 0.0, self.T)
        out = np.empty((tt.size, self.ps.shape[1]))
        idx = np.clip(np.searchsorted(self._starts, tt, side="right") - 1, 0, len(self.segments) - 1)
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = np.asarray(self.segments[k].eval(tt[sel])).T
        return out[0] if scalar else out

    def __call__(self, t):
        return self.costate(t)


def costate_integrate(
    problem,
    traj: Trajectory,
    u: ControlSignal,
    T: float,
    rtol: float = 1e-11,
    atol: float = 1e-13,
) -> CostateTrajectory:
    """Backward adaptive integration of the adjoint, restarted at breakpoints."""
    if traj.t_end < T - 1e-9:
        raise ValueError("trajectory does not cover [0, T]")
    cuts = set(u.interior_breakpoints(T).tolist())
    cuts.update(b for b in problem.system.time_breakpoints if 0.0 < b < T)
    edges = np.concatenate(([0.0], np.sort(np.array(sorted(cuts))), [T])) if cuts else np.array([0.0, T])

    n = problem.system.state_dim
    p_cur = np.zeros(n)
    segments: list[_Segment] = []
    ts_parts = [np.array([T])]
    ps_parts = [p_cur[None, :]]

    for lo, hi in zip(edges[:-1][::-1], edges[1:][::-1]):
        if hi - lo <= 0.0:
            continue
        u_val = u.evaluate(0.5 * (lo + hi))

        def rhs(t, p):
            dp = adjoint_rhs(problem, t, p, traj.state(t), u_val)
            if not np.all(np.isfinite(dp)):
                raise IntegrationError(f"nonfinite adjoint evaluation at t={t:.6g}")
            return dp

        sol = solve_ivp(rhs, (hi, lo), p_cur, method="RK45", rtol=rtol, atol=atol, dense_output=True)
        if sol.status != 0:
            raise IntegrationError(f"costate integration failed on [{lo:.6g}, {hi:.6g}]: {sol.message}")
        segments.append(_Segment(lo, hi, sol.sol))
        ts_parts.append(sol.t[1:])
        ps_parts.append(sol.y.T[1:])
        p_cur = sol.y[:, -1]

    segments.reverse()
    ts = np.concatenate(ts_parts)[::-1]
    ps = np.vstack(ps_parts)[::-1]
    return CostateTrajectory(ts=ts, ps=ps, segments=segments, T=T)


@dataclass(eq=False)
class SwitchingFunction:
    """Samples of phi = dH/du with bracketed roots and singular windows."""

    ts: np.ndarray
    values: np.ndarray  # (k, m)
    zero_crossings: list[tuple[float, int]]  # (time, component)
    singular_intervals: list[tuple[float, float, int]]  # (start, end, component)
    phi: Callable[[float], np.ndarray]

    def component(self, i: int = 0) -> np.ndarray:
        return self.values[:, i]


def _phi_factory(problem, traj: Trajectory, costate: CostateTrajectory):
    if problem.ell_u_coeff is None:
        raise NotAffineError(
            "cost has no declared affine-in-u coefficient; use the direct solver instead"
        )

    def phi(t: float) -> np.ndarray:
        x = traj.state(t)
        p = costate.costate(t)
        b = np.asarray(problem.system.input_matrix(t, x), float).reshape(
            problem.system.state_dim, problem.system.control_dim
        )
        c = np.atleast_1d(np.asarray(problem.ell_u_coeff(t, x), float))
        return c + b.T @ p

    return phi


def switching_function(
    problem,
    traj: Trajectory,
    costate: CostateTrajectory,
    T: float | None = None,
    samples: int = 2001,
    singular_tol: float = 1e-7,
    min_window: int = 10,
    root_tol: float = 1e-10,
) -> SwitchingFunction:
    """Evaluate phi along the arc; bracket sign changes; flag singular windows.

    A singular window is a run of at least ``min_window`` consecutive samples
    with |phi| below ``singular_tol``; isolated crossings stay classified as
    roots because their below-tolerance runs are shorter.
    """
    T = costate.T if T is None else T
    ts = np.linspace(0.0, T, samples)
    phi = _phi_factory(problem, traj, costate)
    vals = np.array([phi(t) for t in ts])
    m = vals.shape[1]

    crossings: list[tuple[float, int]] = []
    singulars: list[tuple[float, float, int]] = []
    for comp in range(m):
        v = vals[:, comp]
        small = np.abs(v) < singular_tol
        # singular windows first, so sign changes inside them are not roots
        runs = []
        start = None
        for i, flag in enumerate(small):
            if flag and start is None:
                start = i
            elif not flag and start is not None:
                runs.append((start, i - 1))
                start = None
        if start is not None:
            runs.append((start, len(small) - 1))
        windows = [(a, b) for a, b in runs if (b - a + 1) >= min_window]
        for a, b in windows:
            singulars.append((float(ts[a]), float(ts[b]), comp))

        covered = np.zeros_like(small)
        for a, b in windows:
            covered[a : b + 1] = True
        for i in range(len(v) - 1):
            if covered[i] or covered[i + 1]:
                continue
            if v[i] == 0.0:
                crossings.append((float(ts[i]), comp))
            elif v[i] * v[i + 1] < 0.0:
                root = brentq(
                    lambda t: float(phi(t)[comp]), ts[i], ts[i + 1], xtol=root_tol
                )
                crossings.append((float(root), comp))
    return SwitchingFunction(
        ts=ts, values=vals, zero_crossings=crossings, singular_intervals=singulars, phi=phi
    )


@dataclass(frozen=True)
class ExtremalTols:
    bang_tol: float = 1e-6
    singular_phi_tol: float = 1e-7
    singular_state_tol: float = 1e-6
    vertex_tol: float = 1e-9


@dataclass(frozen=True)
class ExtremalReport:
    consistent: bool
    max_sign_violation: float
    singular_arc_residuals: list[float]
    piece_classes: list[str]
    phi_terminal: float
    details: list[dict]


def verify_extremal(
    problem,
    u: ControlSignal,
    T: float,
    tols: ExtremalTols = ExtremalTols(),
    rtol: float = 1e-11,
    atol: float = 1e-13,
    samples_per_piece: int = 201,
) -> ExtremalReport:
    """Check the minimum-condition sign pattern of a candidate step control.

    Pieces at the lower vertex of the box need phi >= -tol, pieces at the
    upper vertex need phi <= tol, and declared singular pieces (values
    strictly inside the box) need |phi| within the singular tolerance plus a
    problem-declared singular-arc state residual.
    """
    U = problem.control_set
    if not U.is_box:
        raise NotAffineError("vertex logic needs a box control set")
    traj = problem.integrate(u, T, rtol=rtol, atol=atol)
    costate = costate_integrate(problem, traj, u, T, rtol=rtol, atol=atol)
    phi = _phi_factory(problem, traj, costate)

    worst = 0.0
    residuals: list[float] = []
    classes: list[str] = []
    details: list[dict] = []
    bp = u.breakpoints
    for j in range(u.num_pieces):
        lo, hi = float(bp[j]), float(min(bp[j + 1], T))
        if hi - lo <= 1e-12 or lo >= T:
            continue
        val = u.values[j]
        ts = np.linspace(lo, hi, samples_per_piece)
        phis = np.array([phi(t) for t in ts])
        for comp in range(U.dim):
            at_lower = abs(val[comp] - U.lower[comp]) <= tols.vertex_tol
            at_upper = abs(val[comp] - U.upper[comp]) <= tols.vertex_tol
            pv = phis[:, comp]
            if at_lower and at_upper:
                cls = "degenerate"
                violation = 0.0
            elif at_lower:
                cls = "lower-vertex"
                violation = max(0.0, float(-np.min(pv)))
            elif at_upper:
                cls = "upper-vertex"
                violation = max(0.0, float(np.max(pv)))
            else:
                cls = "singular"
                violation = max(0.0, float(np.max(np.abs(pv))) - tols.singular_phi_tol)
                if problem.singular_state_residual is not None:
                    res = max(
                        float(problem.singular_state_residual(t, traj.state(t))) for t in ts
                    )
                else:
                    dphi = np.gradient(pv, ts)
                    res = float(np.max(np.abs(dphi)))
                residuals.append(res)
            classes.append(cls)
            details.append(
                {
                    "piece": j,
                    "component": comp,
                    "class": cls,
                    "interval": (lo, hi),
                    "violation": violation,
                }
            )
            if cls != "singular":
                worst = max(worst, violation)
            else:
                worst = max(worst, violation)

    sing_ok = all(r <= tols.singular_state_tol for r in residuals)
    bang_ok = all(
        d["violation"] <= tols.bang_tol for d in details if d["class"] in ("lower-vertex", "upper-vertex")
    )
    phi_ok = all(d["violation"] <= 0.0 + 1e-15 for d in details if d["class"] == "singular")
    return ExtremalReport(
        consistent=bool(bang_ok and sing_ok and phi_ok),
        max_sign_violation=worst,
        singular_arc_residuals=residuals,
        piece_classes=classes,
        phi_terminal=float(np.max(phi(T))),
        details=details,
    )
