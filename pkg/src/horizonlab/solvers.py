"""Finite-horizon solvers: switching-time optimization and a direct mesh method.

Two independent routes to the same optimum:

* ``solve_switching_times`` minimizes the horizon cost over the breakpoints
  (and any free piece values) of a fixed step-control template, using
  derivative-free search: Nelder-Mead on a gap parameterization with
  deterministic multistarts, then a coordinate-wise golden-section polish.
* ``solve_direct`` transcribes the control as one value per cell of a uniform
  mesh and runs projected-gradient descent with Armijo backtracking, with the
  cell gradients assembled from the adjoint sweep.

``brute_force_oracle`` is the independent verification route for templates
with a single free breakpoint: an exhaustive scan on a uniform grid, driven by
a self-contained fixed-step RK4 integrator (nothing shared with the adaptive
path above).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from . import pmp
from .costs import evaluate_cost
from .dynamics import IntegrationError
from .signals import ControlSignal

__all__ = [
    "PatternTemplate",
    "DiscretizedControl",
    "SolveOpts",
    "DirectOpts",
    "SwitchResult",
    "DirectResult",
    "OracleResult",
    "solve_switching_times",
    "solve_direct",
    "brute_force_oracle",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class PatternTemplate:
    """Step-control template: N piece values, breakpoints free by default.

    ``values`` has one row per piece.  ``free_value_mask`` marks pieces whose
    value is a decision variable (clamped to the control box); the rest are
    fixed.  All interior breakpoints are decision variables, ordered through
    the nonnegative-gap parameterization, so monotonicity holds by
    construction.
    """

    values: np.ndarray
    free_value_mask: tuple[bool, ...] | None = None

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, float))
        if vals.shape[0] < 1:
            raise ValueError("template needs at least one piece")
        object.__setattr__(self, "values", vals)
        if self.free_value_mask is not None and len(self.free_value_mask) != vals.shape[0]:
            raise ValueError("free_value_mask length must match piece count")

    @property
    def num_pieces(self) -> int:
        return self.values.shape[0]

    @property
    def num_free_values(self) -> int:
        return sum(self.free_value_mask) if self.free_value_mask else 0

    def signal(self, interior_taus: Sequence[float], T: float, u_star, values=None) -> ControlSignal:
        vals = self.values if values is None else np.atleast_2d(np.asarray(values, float))
        bp = np.concatenate(([0.0], np.sort(np.asarray(interior_taus, float)), [T]))
        return ControlSignal(bp, vals, u_star)


@dataclass(frozen=True)
class SolveOpts:
    seed: int = 0
    starts: int = 5
    nm_maxiter: int = 40
    polish_passes: int = 3
    polish_tol: float = 1e-8
    explore_rtol: float = 1e-7   # Nelder-Mead phase: basin location only
    polish_rtol: float = 1e-11   # golden-section phase: breakpoint precision
    atol: float = 1e-13
    max_iters: int = 20_000  # cap on objective evaluations


@dataclass(eq=False)
class SwitchResult:
    signal: ControlSignal
    cost: float
    taus: np.ndarray
    values: np.ndarray
    log: list[tuple[str, int, float]]
    nfev: int
    converged: bool


def _gaps_to_taus(gaps: np.ndarray, T: float) -> np.ndarray:
    g = np.abs(gaps)
    s = float(np.sum(g))
    if s <= 0.0:
        g = np.ones_like(g)
        s = float(g.size)
    return T * np.cumsum(g)[:-1] / s


def _taus_to_gaps(taus: np.ndarray, T: float) -> np.ndarray:
    bp = np.concatenate(([0.0], np.sort(taus), [T]))
    g = np.diff(bp)
    return np.maximum(g, 1e-9 * T)


def pattern_cost(problem, sig: ControlSignal, T: float, rtol: float = 1e-11,
                 atol: float = 1e-13) -> float:
    """Horizon cost of a step control, with the integral carried as a state.

    One adaptive integration of (x, J) per smooth segment: the quadrature
    error is controlled by the same tolerance as the state.  Candidates whose
    state escapes (or whose cost integrand is nonfinite) score +inf.  This is
    the solver's inner objective; the standalone quadrature evaluator in
    :mod:`horizonlab.costs` is the analysis-path equivalent.
    """
    from scipy.integrate import solve_ivp  # local alias keeps module import light

    sys_ = problem.system
    ell = problem.cost.ell
    n = sys_.state_dim
    cuts = set(sig.interior_breakpoints(T).tolist())
    cuts.update(b for b in sys_.time_breakpoints if 0.0 < b < T)
    edges = np.concatenate(([0.0], np.sort(np.array(sorted(cuts))), [T])) if cuts else np.array([0.0, T])
    radius = problem.escape_radius

    def escape(t, s):
        return float(np.linalg.norm(s[:n])) - radius

    escape.terminal = True
    escape.direction = 1.0

    state = np.concatenate([problem.x0, [0.0]])
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo <= 0.0:
            continue
        u_val = sig.evaluate(0.5 * (lo + hi))

        def rhs(t, s):
            x = s[:n]
            return np.concatenate([sys_.rhs(t, x, u_val), [ell(t, x, u_val)]])

        try:
            sol = solve_ivp(rhs, (lo, hi), state, method="RK45", rtol=rtol,
                            atol=atol, events=escape)
        except (ValueError, FloatingPointError):
            return math.inf
        if sol.status != 0 or not np.all(np.isfinite(sol.y[:, -1])):
            return math.inf
        state = sol.y[:, -1]
    return float(state[n])


def solve_switching_times(
    problem,
    template: PatternTemplate,
    T: float,
    opts: SolveOpts | None = None,
    warm_start: np.ndarray | None = None,
) -> SwitchResult:
    """Minimize the horizon cost over a step-control template.

    Nelder-Mead runs on z with gaps g = z^2 (monotone breakpoints for free),
    from ``opts.starts`` deterministic multistarts; the best point is then
    polished coordinate-wise by golden-section search on each breakpoint
    between its neighbors.  Candidates whose trajectory escapes are scored
    +inf.  Returns the best signal found, its cost, and an iteration log.
    """
    opts = opts or SolveOpts()
    if opts.polish_passes < 2:
        opts = SolveOpts(**{**opts.__dict__, "polish_passes": 2})
    N = template.num_pieces
    n_free_vals = template.num_free_values
    U = problem.control_set
    log: list[tuple[str, int, float]] = []
    nfev = 0

    def build(taus: np.ndarray, free_vals: np.ndarray) -> ControlSignal:
        vals = template.values.copy()
        if n_free_vals:
            fv = free_vals.reshape(n_free_vals, U.dim)
            k = 0
            for i, free in enumerate(template.free_value_mask):
                if free:
                    vals[i] = U.project(fv[k])
                    k += 1
        return template.signal(taus, T, problem.u_star, vals)

    def objective_taus(taus: np.ndarray, free_vals: np.ndarray, precise: bool) -> float:
        nonlocal nfev
        if nfev >= opts.max_iters:
            return math.inf
        nfev += 1
        sig = build(taus, free_vals)
        try:
            if not precise:
                return pattern_cost(problem, sig, T, rtol=opts.explore_rtol, atol=opts.atol)
            # precision path: dense trajectory plus quadrature, whose error is
            # smooth in the breakpoints; needed for coordinates whose cost
            # signal sits only a few ulps above flat (heavily discounted
            # late-time switches)
            traj = problem.integrate(sig, T, rtol=opts.polish_rtol, atol=opts.atol)
            if traj.blow_up:
                return math.inf
            return evaluate_cost(problem.cost, traj, sig, T, quad_tol=1e-12)
        except IntegrationError:
            return math.inf

    def objective_z(z: np.ndarray) -> float:
        gaps = z[:N] ** 2
        taus = _gaps_to_taus(gaps, T)
        fv = z[N:]
        return objective_taus(taus, fv, False)

    rng = np.random.default_rng(opts.seed)
    starts: list[np.ndarray] = []
    if warm_start is not None:
        g = _taus_to_gaps(np.asarray(warm_start, float), T)
        starts.append(np.sqrt(g / np.sum(g)))
    starts.append(np.sqrt(np.full(N, 1.0 / N)))
    while len(starts) < max(1, opts.starts):
        starts.append(np.sqrt(rng.dirichlet(np.ones(N))))

    fv0 = np.zeros(n_free_vals * U.dim)
    if n_free_vals:
        mid = U.project(np.zeros(U.dim)) if not U.is_box else 0.5 * (U.lower + U.upper)
        fv0 = np.tile(mid, n_free_vals)

    best_z = None
    best_cost = math.inf
    for k, z0 in enumerate(starts):
        z_full = np.concatenate([z0, fv0])
        res = minimize(
            objective_z,
            z_full,
            method="Nelder-Mead",
            options={
                "maxiter": opts.nm_maxiter,
                "xatol": 1e-7,
                "fatol": 1e-11,
                "adaptive": True,
            },
        )
        log.append(("nelder-mead", k, float(res.fun)))
        if res.fun < best_cost:
            best_cost = float(res.fun)
            best_z = res.x.copy()

    taus = _gaps_to_taus(best_z[:N] ** 2, T)
    free_vals = best_z[N:].copy()
    best_cost = objective_taus(taus, free_vals, True)

    def golden(fun: Callable[[float], float], lo: float, hi: float, tol: float) -> tuple[float, float]:
        a, b = lo, hi
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        fc, fd = fun(c), fun(d)
        while (b - a) > tol:
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - _GOLDEN * (b - a)
                fc = fun(c)
            else:
                a, c, fc = c, d, fd
                d = a + _GOLDEN * (b - a)
                fd = fun(d)
        return (c, fc) if fc <= fd else (d, fd)

    for sweep in range(opts.polish_passes):
        # first pass sweeps the full bracket between neighbors at the loose
        # tolerance (basin location); later passes re-polish a shrinking
        # window around the current point at the tight tolerance
        loose = sweep == 0
        tol_here = (1e-4 if loose else opts.polish_tol) * max(1.0, T)
        window = None if loose else max(0.02 * T / (4.0 ** (sweep - 1)), 1e3 * opts.polish_tol)
        taus_before = taus.copy()
        pass_start = taus.copy()
        for j in range(len(taus)):
            lo = 0.0 if j == 0 else taus[j - 1]
            hi = T if j == len(taus) - 1 else taus[j + 1]
            if window is not None:
                lo = max(lo, taus[j] - window)
                hi = min(hi, taus[j] + window)
            if hi - lo <= opts.polish_tol:
                continue

            def f(tj: float, j=j) -> float:
                trial = taus.copy()
                trial[j] = tj
                return objective_taus(trial, free_vals, not loose)

            t_best, c_best = golden(f, lo, hi, tol_here)
            if loose:
                taus[j] = t_best  # loose costs are not comparable; location only
            elif c_best <= best_cost:
                taus[j] = t_best
                best_cost = c_best
        if loose:
            moved_cost = objective_taus(taus, free_vals, True)
            if moved_cost <= best_cost:
                best_cost = moved_cost
            else:
                taus = taus_before  # loose sweep made it worse; keep the NM point
        if n_free_vals:
            for j in range(free_vals.size):
                lo_v, hi_v = (-1e3, 1e3) if not U.is_box else (
                    float(U.lower[j % U.dim]),
                    float(U.upper[j % U.dim]),
                )

                def fv_fun(v: float, j=j) -> float:
                    trial = free_vals.copy()
                    trial[j] = v
                    return objective_taus(taus, trial, True)

                v_best, c_best = golden(fv_fun, lo_v, hi_v, opts.polish_tol * max(1.0, hi_v - lo_v))
                if c_best <= best_cost:
                    free_vals[j] = v_best
                    best_cost = c_best
        log.append(("golden", sweep, float(best_cost)))
        if not loose and np.max(np.abs(taus - pass_start), initial=0.0) < 100 * opts.polish_tol:
            break  # polish converged; later passes would not move anything

    sig = build(taus, free_vals)
    converged = nfev < opts.max_iters
    return SwitchResult(
        signal=sig,
        cost=float(best_cost),
        taus=taus,
        values=sig.values.copy(),
        log=log,
        nfev=nfev,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Direct mesh method


@dataclass(eq=False)
class DiscretizedControl:
    """One control vector per cell of a uniform mesh on [0, T]."""

    T: float
    values: np.ndarray  # (M, m)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M + 1)

    def to_signal(self, u_star) -> ControlSignal:
        return ControlSignal(self.edges, self.values, u_star)

    def evaluate(self, t: float) -> np.ndarray:
        i = min(self.M - 1, max(0, int(t / self.T * self.M)))
        return self.values[i]


@dataclass(frozen=True)
class DirectOpts:
    max_iters: int = 400
    gtol: float = 1e-7
    armijo_c1: float = 1e-4
    alpha0: float = 1.0
    nsub: int = 2
    u_init: np.ndarray | None = None
    escape_norm: float = 1e12


@dataclass(eq=False)
class DirectResult:
    control: DiscretizedControl
    cost: float
    kkt_residual: float
    log: list[tuple[int, float, float, float]]  # (iter, cost, step, residual)
    converged: bool


def _forward_mesh(problem, uc: np.ndarray, T: float, nsub: int, escape_norm: float):
    """Fixed-step RK4 over the mesh, cost carried as an augmented state.

    Returns fine-grid times, states, state derivatives, and the accumulated
    cost, or +inf cost when the state norm escapes.
    """
    M = uc.shape[0]
    n = problem.system.state_dim
    K = M * nsub
    ts = np.linspace(0.0, T, K + 1)
    h = T / K
    xs = np.empty((K + 1, n))
    fs = np.empty((K + 1, n))
    xs[0] = problem.x0
    cost = 0.0
    sys = problem.system
    ell = problem.cost.ell
    for k in range(K):
        cell = min(M - 1, k // nsub)
        u = uc[cell]
        t = ts[k]
        x = xs[k]
        k1 = sys.rhs(t, x, u); c1 = ell(t, x, u)
        k2 = sys.rhs(t + h / 2, x + h / 2 * k1, u); c2 = ell(t + h / 2, x + h / 2 * k1, u)
        k3 = sys.rhs(t + h / 2, x + h / 2 * k2, u); c3 = ell(t + h / 2, x + h / 2 * k2, u)
        k4 = sys.rhs(t + h, x + h * k3, u); c4 = ell(t + h, x + h * k3, u)
        xs[k + 1] = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        cost += h / 6 * (c1 + 2 * c2 + 2 * c3 + c4)
        fs[k] = k1
        if not np.all(np.isfinite(xs[k + 1])) or np.linalg.norm(xs[k + 1]) > escape_norm:
            return ts, xs, fs, math.inf
    fs[K] = sys.rhs(ts[K], xs[K], uc[M - 1])
    return ts, xs, fs, cost


def _gradient_mesh(problem, uc: np.ndarray, ts, xs, fs, nsub: int) -> np.ndarray:
    """Cell gradients dJ/du_cell = integral over the cell of dH/du.

    The adjoint is swept backward on the same fine grid (RK4 with Hermite
    state interpolation at half steps), then dH/du = ell_u + b^T p is
    accumulated per cell by the trapezoid rule.
    """
    M, m = uc.shape
    n = problem.system.state_dim
    K = M * nsub
    h = ts[1] - ts[0]
    ps = np.empty((K + 1, n))
    ps[K] = 0.0

    def x_at(k: int, frac: float) -> np.ndarray:
        # cubic Hermite between fine nodes k and k+1
        x0, x1 = xs[k], xs[k + 1]
        f0, f1 = fs[k], fs[k + 1]
        s = frac
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * x0 + h10 * h * f0 + h01 * x1 + h11 * h * f1

    for k in range(K, 0, -1):
        cell = min(M - 1, (k - 1) // nsub)
        u = uc[cell]
        t1, t0 = ts[k], ts[k - 1]
        x1, xm, x0 = xs[k], x_at(k - 1, 0.5), xs[k - 1]
        p = ps[k]
        k1 = pmp.adjoint_rhs(problem, t1, p, x1, u)
        k2 = pmp.adjoint_rhs(problem, t1 - h / 2, p - h / 2 * k1, xm, u)
        k3 = pmp.adjoint_rhs(problem, t1 - h / 2, p - h / 2 * k2, xm, u)
        k4 = pmp.adjoint_rhs(problem, t0, p - h * k3, x0, u)
        ps[k - 1] = p - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    grad = np.zeros((M, m))
    sys = problem.system
    for k in range(K):
        cell = min(M - 1, k // nsub)
        u = uc[cell]
        for idx, (t, x, p) in enumerate(((ts[k], xs[k], ps[k]), (ts[k + 1], xs[k + 1], ps[k + 1]))):
            b = np.asarray(sys.input_matrix(t, x), float).reshape(n, m)
            hu = problem.cost.ell_grad_u(t, x, u) + b.T @ p
            grad[cell] += 0.5 * h * hu
    return grad


def solve_direct(problem, T: float, M: int, opts: DirectOpts | None = None) -> DirectResult:
    """Projected-gradient descent on a uniform control mesh.

    Stops when the projected-gradient norm falls below ``gtol`` (scaled) or
    the iteration cap is reached; the cost log is nonincreasing by the Armijo
    condition.  Line-search failure returns the best iterate, flagged.
    """
    if M < 1:
        raise ValueError("need at least one mesh cell")
    opts = opts or DirectOpts()
    U = problem.control_set
    m = U.dim
    if opts.u_init is not None:
        uc = np.tile(np.atleast_1d(np.asarray(opts.u_init, float)), (M, 1))
    elif U.is_box:
        uc = np.tile(0.5 * (U.lower + U.upper), (M, 1))
    else:
        uc = np.zeros((M, m))

    def project(u: np.ndarray) -> np.ndarray:
        if not U.is_box:
            return u
        return np.clip(u, U.lower, U.upper)

    ts, xs, fs, cost = _forward_mesh(problem, uc, T, opts.nsub, opts.escape_norm)
    log: list[tuple[int, float, float, float]] = []
    alpha = opts.alpha0
    converged = False
    residual = math.inf
    for it in range(opts.max_iters):
        grad = _gradient_mesh(problem, uc, ts, xs, fs, opts.nsub)
        step_full = project(uc - grad) - uc
        residual = float(np.max(np.abs(step_full))) / (1.0 + float(np.max(np.abs(uc))))
        log.append((it, cost, alpha, residual))
        if residual < opts.gtol:
            converged = True
            break
        alpha = min(alpha * 2.0, 1e6)
        accepted = False
        while alpha > 1e-14:
            u_new = project(uc - alpha * grad)
            ts_n, xs_n, fs_n, cost_new = _forward_mesh(problem, u_new, T, opts.nsub, opts.escape_norm)
            decrease = float(np.sum(grad * (uc - u_new)))
            if math.isfinite(cost_new) and cost_new <= cost - opts.armijo_c1 * decrease:
                uc, ts, xs, fs, cost = u_new, ts_n, xs_n, fs_n, cost_new
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break  # line-search failure: return best-so-far, flagged
    control = DiscretizedControl(T=T, values=uc)
    return DirectResult(
        control=control,
        cost=float(cost),
        kkt_residual=residual,
        log=log,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Brute-force oracle


@dataclass(frozen=True)
class OracleResult:
    tau: float
    cost: float
    grid_step: float
    taus: np.ndarray
    costs: np.ndarray


def _rk4_aug_step(problem, t: float, state: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
    """One RK4 step of (x, running cost) for an ensemble of states (k, n+1)."""
    rhs_vec = problem.rhs_vec
    ell_vec = problem.ell_vec

    def f(tt: float, s: np.ndarray) -> np.ndarray:
        x = s[:, :-1]
        dx = rhs_vec(tt, x, u)
        dc = ell_vec(tt, x, u)
        return np.concatenate([dx, dc[:, None]], axis=1)

    k1 = f(t, state)
    k2 = f(t + h / 2, state + h / 2 * k1)
    k3 = f(t + h / 2, state + h / 2 * k2)
    k4 = f(t + h, state + h * k3)
    return state + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def brute_force_oracle(
    problem,
    template: PatternTemplate,
    T: float,
    grid_step: float = 1e-2,
    escape_norm: float = 1e9,
    max_substep: float = 5e-3,
) -> OracleResult:
    """Exhaustive scan of the single free breakpoint over a uniform grid.

    Supports exactly one free breakpoint (a two-piece template).  Every
    candidate cost is computed with a self-contained fixed-step RK4 march that
    carries the running cost as an augmented state, so the scan is an exact
    arg-min over the grid, independent of the adaptive path used by
    ``solve_switching_times``.  The pre-switch arc is shared by all
    candidates; the post-switch arcs advance together as one vectorized
    ensemble with one particle per candidate.
    """
    if template.num_pieces != 2:
        raise ValueError("oracle handles exactly one free breakpoint (two pieces)")
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")

    n = problem.system.state_dim
    v1, v2 = template.values[0], template.values[1]
    n_g = int(math.floor(T / grid_step + 1e-9))
    cand = np.arange(n_g + 1) * grid_step
    if cand[-1] < T - 1e-12:
        cand = np.append(cand, T)
    k_cand = cand.size

    ens = np.zeros((k_cand, n + 1))
    active = np.zeros(k_cand, dtype=bool)
    dead = np.zeros(k_cand, dtype=bool)
    shared = np.concatenate([np.atleast_1d(np.asarray(problem.x0, float)), [0.0]])
    prefix_dead = False
    ens[0] = shared
    active[0] = True

    for i in range(k_cand - 1):
        t0, t1 = float(cand[i]), float(cand[i + 1])
        ksub = max(1, int(math.ceil((t1 - t0) / max_substep)))
        hs = (t1 - t0) / ksub
        if not prefix_dead:
            s = shared[None, :]
            for k in range(ksub):
                s = _rk4_aug_step(problem, t0 + k * hs, s, v1, hs)
            shared = s[0]
            if not np.all(np.isfinite(shared)) or np.linalg.norm(shared[:n]) > escape_norm:
                prefix_dead = True
        sel = active & ~dead
        if np.any(sel):
            e = ens[sel]
            for k in range(ksub):
                e = _rk4_aug_step(problem, t0 + k * hs, e, v2, hs)
            ens[sel] = e
            norms = np.linalg.norm(e[:, :n], axis=1)
            bad = ~np.isfinite(norms) | (norms > escape_norm)
            if np.any(bad):
                dead[np.where(sel)[0][bad]] = True
        if prefix_dead:
            dead[i + 1 :] = True
            active[i + 1 :] = True
        else:
            ens[i + 1] = shared
            active[i + 1] = True

    costs = np.where(dead, math.inf, ens[:, n])
    best = int(np.argmin(costs))
    return OracleResult(
        tau=float(cand[best]),
        cost=float(costs[best]),
        grid_step=float(grid_step),
        taus=cand,
        costs=costs,
    )
