"""Storage-function certificates for dissipative state equations.

A storage candidate S >= 0 certifies dissipativity with respect to a supply
rate r(t, x, u) when the stored value never grows faster than the integrated
supply.  For C1 storage this is equivalent to the pointwise differential
condition  <grad S(x), a(t,x) + b(t,x) u>  <=  r(t,x,u),  which is what the
grid checker targets.  All verdicts here are sampling evidence, never proofs:
the checker evaluates margins on a product grid and locally refines around
the worst point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from . import dynamics as dyn
from .signals import ControlSignal, ControlValueSet

__all__ = [
    "StorageCertificate",
    "DifferentialReport",
    "IntegralReport",
    "CoercivityReport",
    "BoundednessReport",
    "check_differential",
    "check_integral",
    "check_coercivity",
    "uniform_boundedness_probe",
]

_FD_STEP = float(np.cbrt(np.finfo(float).eps))


@dataclass(eq=False)
class StorageCertificate:
    """Candidate storage function with the supply rate it is checked against.

    ``supply`` is r(t, x, u); in this artifact the supply is the running cost
    of the optimal control problem under study.  ``domain_box`` bounds the
    state region for grid checks; ``coercivity_radii`` are the radii used to
    probe sublevel-set growth.
    """

    S: Callable[[np.ndarray], float]
    supply: Callable[[float, np.ndarray, np.ndarray], float]
    domain_box: tuple
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    coercivity_radii: tuple[float, ...] = (1.0, 10.0, 100.0, 1e3, 1e4)
    name: str = ""

    def gradient(self, x: np.ndarray) -> np.ndarray:
        if self.grad is not None:
            return np.atleast_1d(np.asarray(self.grad(x), float))
        g = np.empty_like(np.atleast_1d(x))
        xv = np.atleast_1d(x)
        for i in range(xv.size):
            h = _FD_STEP * (1.0 + abs(float(xv[i])))
            xp = xv.copy(); xp[i] += h
            xm = xv.copy(); xm[i] -= h
            g[i] = (float(self.S(xp)) - float(self.S(xm))) / (2 * h)
        return g

    def gradient_consistent(self, points: Sequence[np.ndarray], tol: float = 1e-5) -> bool:
        """Central finite differences of S must reproduce the declared gradient."""
        if self.grad is None:
            return True
        for x in points:
            xv = np.atleast_1d(np.asarray(x, float))
            fd = np.empty_like(xv)
            for i in range(xv.size):
                h = 1e-6 * (1.0 + abs(float(xv[i])))
                xp = xv.copy(); xp[i] += h
                xm = xv.copy(); xm[i] -= h
                fd[i] = (float(self.S(xp)) - float(self.S(xm))) / (2 * h)
            g = self.gradient(xv)
            if np.any(np.abs(fd - g) > tol * (1.0 + np.abs(g))):
                return False
        return True


@dataclass(frozen=True)
class DifferentialReport:
    ok: bool
    worst_margin: float
    witness: tuple[float, np.ndarray, np.ndarray]
    worst_ratio: float
    ratio_witness: tuple[float, np.ndarray, np.ndarray] | None
    grid_spec: dict

    def summary_record(self) -> dict:
        t, x, u = self.witness
        return {
            "ok": self.ok,
            "worst_margin": self.worst_margin,
            "witness_t": t,
            "witness_x": list(map(float, np.atleast_1d(x))),
            "witness_u": list(map(float, np.atleast_1d(u))),
            "worst_ratio": self.worst_ratio,
            "grid_spec": self.grid_spec,
        }


def _axis_grids(box, points_per_axis: int) -> list[np.ndarray]:
    lo = np.atleast_1d(np.asarray(box[0], float))
    hi = np.atleast_1d(np.asarray(box[1], float))
    return [np.linspace(lo[i], hi[i], points_per_axis) for i in range(lo.size)]


def _product(axes: list[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def check_differential(
    cert: StorageCertificate,
    system: dyn.ControlAffineSystem,
    U: ControlValueSet,
    t_grid=None,
    x_grid=None,
    u_grid=None,
    points_per_axis: int = 65,
    refine_rounds: int = 2,
    margin_tol: float = 1e-9,
) -> DifferentialReport:
    """Grid check of the differential dissipation inequality, with refinement.

    margin(t,x,u) = r(t,x,u) - <grad S(x), a(t,x) + b(t,x) u>, minimized over
    the grid and locally refined around the worst point; the certificate
    passes when the refined worst margin stays above -margin_tol.  Grid points
    with r = +inf are trivially satisfied and skipped.

    The report also carries the worst supply ratio
    <grad S, a + b u> / r over points with positive finite supply, refined the
    same way; for supplies linear in u this isolates the sharp constant of
    the inequality.
    """
    if t_grid is None:
        tb = sorted(b for b in system.time_breakpoints if b > 0)
        t_max = (tb[-1] + 1.0) if tb else 1.0
        pts = {0.0, t_max}
        pts.update(tb)
        pts.update(b + min(0.5, 0.5 * (t_max - b)) for b in tb)
        t_axis = np.unique(np.concatenate([np.linspace(0.0, t_max, 9), np.array(sorted(pts))]))
    else:
        t_axis = np.unique(np.atleast_1d(np.asarray(t_grid, float)))

    x_axes = _axis_grids(cert.domain_box, points_per_axis) if x_grid is None else None
    if u_grid is None:
        if not U.is_box:
            raise ValueError("full-space U needs an explicit u_grid")
        u_axes = _axis_grids((U.lower, U.upper), points_per_axis)
    else:
        u_axes = None

    def margin_and_ratio(t: float, x: np.ndarray, u: np.ndarray):
        S_val = float(cert.S(x))
        if not math.isfinite(S_val):
            raise ValueError(f"nonfinite storage value at x={x}")
        if S_val < -1e-12:
            return -math.inf, math.inf  # negative storage sample: certificate fails
        lhs = float(cert.gradient(x) @ system.rhs(t, x, u))
        if not math.isfinite(lhs):
            raise ValueError(f"nonfinite dynamics/gradient at (t={t}, x={x})")
        r = float(cert.supply(t, x, u))
        if math.isinf(r):
            return math.inf, -math.inf  # trivially satisfied, no ratio
        margin = r - lhs
        ratio = lhs / r if r > 1e-300 else -math.inf
        return margin, ratio

    def sweep(t_vals, x_pts, u_pts):
        worst_m, worst_m_at = math.inf, None
        best_r, best_r_at = -math.inf, None
        for t in t_vals:
            for x in x_pts:
                for u in u_pts:
                    m, r = margin_and_ratio(float(t), x, u)
                    if m < worst_m:
                        worst_m, worst_m_at = m, (float(t), x.copy(), u.copy())
                    if r > best_r:
                        best_r, best_r_at = r, (float(t), x.copy(), u.copy())
        return worst_m, worst_m_at, best_r, best_r_at

    x_pts = _product(x_axes) if x_grid is None else np.atleast_2d(np.asarray(x_grid, float))
    u_pts = _product(u_axes) if u_grid is None else np.atleast_2d(np.asarray(u_grid, float))
    worst_m, worst_m_at, best_r, best_r_at = sweep(t_axis, x_pts, u_pts)

    def refine(center, objective: str):
        """Re-grid locally around a witness, shrinking each axis window."""
        t_c, x_c, u_c = center
        t_h = (t_axis[-1] - t_axis[0]) / max(1, t_axis.size - 1) or 1.0
        x_lo = np.atleast_1d(np.asarray(cert.domain_box[0], float))
        x_hi = np.atleast_1d(np.asarray(cert.domain_box[1], float))
        x_h = (x_hi - x_lo) / (points_per_axis - 1)
        if U.is_box:
            u_lo, u_hi = U.lower, U.upper
            u_h = (u_hi - u_lo) / (points_per_axis - 1)
        else:
            u_lo = u_c - 1.0
            u_hi = u_c + 1.0
            u_h = np.ones_like(u_c)
        val = -math.inf if objective == "ratio" else math.inf
        at = center
        for _ in range(refine_rounds):
            t_vals = np.unique(
                np.clip(np.linspace(t_c - t_h, t_c + t_h, 17), t_axis[0], t_axis[-1])
            )
            xa = [
                np.linspace(
                    max(x_lo[i], x_c[i] - x_h[i]), min(x_hi[i], x_c[i] + x_h[i]), points_per_axis
                )
                for i in range(x_c.size)
            ]
            ua = [
                np.linspace(
                    max(u_lo[i], u_c[i] - u_h[i]), min(u_hi[i], u_c[i] + u_h[i]), 17
                )
                for i in range(u_c.size)
            ]
            m, m_at, r, r_at = sweep(t_vals, _product(xa), _product(ua))
            if objective == "ratio":
                if r > val:
                    val, at = r, r_at
            else:
                if m < val:
                    val, at = m, m_at
            t_c, x_c, u_c = at
            t_h /= 8.0
            x_h = x_h / (0.5 * (points_per_axis - 1))
            u_h = u_h / 8.0
        return val, at

    if worst_m_at is not None and math.isfinite(worst_m):
        ref_m, ref_m_at = refine(worst_m_at, "margin")
        if ref_m < worst_m:
            worst_m, worst_m_at = ref_m, ref_m_at
    if best_r_at is not None and math.isfinite(best_r):
        ref_r, ref_r_at = refine(best_r_at, "ratio")
        if ref_r > best_r:
            best_r, best_r_at = ref_r, ref_r_at

    return DifferentialReport(
        ok=worst_m >= -margin_tol,
        worst_margin=float(worst_m),
        witness=worst_m_at,
        worst_ratio=float(best_r),
        ratio_witness=best_r_at,
        grid_spec={
            "points_per_axis": points_per_axis,
            "refine_rounds": refine_rounds,
            "t_points": int(t_axis.size),
        },
    )


@dataclass(frozen=True)
class IntegralReport:
    ok: bool
    worst_violation: float
    witness: tuple[int, int, float] | None  # (x0 index, control index, time)
    truncated: list[tuple[int, int, float]]  # pairs whose check window hit blow-up


def check_integral(
    cert: StorageCertificate,
    system: dyn.ControlAffineSystem,
    x0_samples: Sequence,
    control_samples: Sequence[ControlSignal],
    T: float,
    tol: float = 1e-7,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    escape_radius: float = 1e9,
    grid_points: int = 513,
) -> IntegralReport:
    """Trajectory-wise check of S(x(t)) - S(x0) <= integral of the supply.

    Each (x0, u) pair is integrated once; the supply is accumulated on a
    shared fine grid by Simpson cumulation, and the dissipation inequality is
    asserted at every node up to min(T, blow-up).  Blow-up truncates the
    window and is reported, not raised.
    """
    worst = -math.inf
    witness = None
    truncated = []
    for i, x0 in enumerate(x0_samples):
        for j, u in enumerate(control_samples):
            traj = dyn.integrate(
                system, u, x0, T, rtol=rtol, atol=atol, escape_radius=escape_radius
            )
            t_hi = traj.t_end
            if traj.blow_up:
                truncated.append((i, j, t_hi))
            ts = np.linspace(0.0, t_hi, grid_points)
            xs = traj.state(ts)
            r_vals = np.array(
                [float(cert.supply(t, x, u.evaluate(t))) for t, x in zip(ts, xs)]
            )
            if np.any(np.isinf(r_vals)):
                # supply +inf from some node on: inequality trivially holds there
                first_inf = int(np.argmax(np.isinf(r_vals)))
                ts, xs, r_vals = ts[:first_inf], xs[:first_inf], r_vals[:first_inf]
                if ts.size < 3:
                    continue
            cum = np.concatenate(([0.0], cumulative_simpson(r_vals, x=ts)))
            S0 = float(cert.S(np.atleast_1d(np.asarray(x0, float))))
            S_vals = np.array([float(cert.S(x)) for x in xs])
            viol = S_vals - S0 - cum
            k = int(np.argmax(viol))
            if viol[k] > worst:
                worst = float(viol[k])
                witness = (i, j, float(ts[k]))
    return IntegralReport(ok=worst <= tol, worst_violation=worst, witness=witness, truncated=truncated)


@dataclass(frozen=True)
class CoercivityReport:
    verdict: str  # "coercive-evidence" | "non-coercive-evidence" | "inconclusive"
    growth_table: list[tuple[float, float]]  # (radius, min S on sphere)


def check_coercivity(cert: StorageCertificate, state_dim: int = 1, directions: int = 64) -> CoercivityReport:
    """Probe min S on spheres of increasing radius.

    Strictly increasing minima that climb by at least one unit across the
    probed radii count as coercive evidence; bounded or decreasing minima as
    non-coercive evidence.  Sampling evidence only, never a proof.
    """
    radii = cert.coercivity_radii
    if not radii or any(b <= a for a, b in zip(radii[:-1], radii[1:])):
        raise ValueError("coercivity_radii must be nonempty and increasing")
    if state_dim == 1:
        dirs = np.array([[-1.0], [1.0]])
    else:
        rng = np.random.default_rng(0)
        raw = rng.normal(size=(directions, state_dim))
        dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    table = []
    for R in radii:
        m = min(float(cert.S(R * d)) for d in dirs)
        table.append((float(R), m))
    mins = np.array([m for _, m in table])
    diffs = np.diff(mins)
    if np.all(diffs > 1e-12) and (mins[-1] - mins[0]) >= 1.0:
        verdict = "coercive-evidence"
    elif mins[-1] <= mins[0] + 0.1 * (abs(mins[0]) + 1.0):
        verdict = "non-coercive-evidence"
    else:
        verdict = "inconclusive"
    return CoercivityReport(verdict=verdict, growth_table=table)


@dataclass(frozen=True)
class BoundednessReport:
    bound: float
    records: list[dict]
    ok: bool


def uniform_boundedness_probe(
    cert: StorageCertificate,
    system: dyn.ControlAffineSystem,
    x0,
    control_samples: Sequence[ControlSignal],
    horizon: float,
    p: float,
    gamma_l1: float = 0.0,
    alpha: float | None = None,
    cost_cap: float | None = None,
    tol: float = 1e-6,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    escape_radius: float = 1e9,
) -> BoundednessReport:
    """Check the sublevel bound implied by dissipativity on sampled trajectories.

    The bound is M = S(x0) + C + ||gamma||_1 for the bounded-control regime
    (p = inf) and M = S(x0) + C + ||gamma||_1 + alpha D with
    D = (C + ||gamma||_1) / min(1, alpha) for finite p.  C defaults to the
    largest sampled cost (the supply integrated along each sample).
    """
    if not math.isinf(p) and alpha is None:
        raise ValueError("finite p requires the growth constant alpha")
    x0v = np.atleast_1d(np.asarray(x0, float))
    records = []
    costs = []
    for j, u in enumerate(control_samples):
        traj = dyn.integrate(system, u, x0v, horizon, rtol=rtol, atol=atol, escape_radius=escape_radius)
        ts = np.linspace(0.0, traj.t_end, 801)
        xs = traj.state(ts)
        r_vals = np.array([float(cert.supply(t, x, u.evaluate(t))) for t, x in zip(ts, xs)])
        cost = float(np.trapezoid(r_vals, ts)) if np.all(np.isfinite(r_vals)) else math.inf
        S_sup = max(float(cert.S(x)) for x in xs)
        state_sup = float(np.max(np.linalg.norm(xs, axis=1)))
        records.append(
            {"index": j, "cost": cost, "state_sup": state_sup, "S_sup": S_sup, "blow_up": traj.blow_up}
        )
        costs.append(cost)
    C = cost_cap if cost_cap is not None else max(c for c in costs if math.isfinite(c))
    M = float(cert.S(x0v)) + C + gamma_l1
    if not math.isinf(p):
        D = (C + gamma_l1) / min(1.0, float(alpha))
        M += float(alpha) * D
    ok = True
    for rec in records:
        rec["within_bound"] = (rec["S_sup"] <= M + tol) and not rec["blow_up"]
        ok = ok and rec["within_bound"]
    return BoundednessReport(bound=M, records=records, ok=ok)
