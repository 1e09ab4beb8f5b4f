"""Control-affine state equations and their numerical integration.

The Cauchy problem is x' = a(t, x) + b(t, x) u(t), x(0) = x0, integrated with
an adaptive Runge-Kutta scheme that restarts at every control breakpoint (and
at declared coefficient breakpoints), so step acceptance never straddles a
discontinuity of the right-hand side.  Finite escape is detected by a terminal
event on |x(t)| = escape_radius; the event time is the recorded surrogate for
the blow-up time of the maximal solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .signals import ControlSignal

__all__ = [
    "ControlAffineSystem",
    "Trajectory",
    "IntegrationError",
    "integrate",
    "extend_tail",
    "lipschitz_probe",
]

_FD_STEP = float(np.cbrt(np.finfo(float).eps))


class IntegrationError(RuntimeError):
    """Integrator could not cover the requested span (stiffness, nonfinite rhs)."""


@dataclass(frozen=True, eq=False)
class ControlAffineSystem:
    """State equation x' = a(t, x) + b(t, x) u.

    ``drift`` maps (t, x) to an (n,) rate, ``input_matrix`` maps (t, x) to an
    (n, m) matrix.  Both must be locally Lipschitz in x on compacts; that is
    asserted by the problem author and can be spot-checked with
    :func:`lipschitz_probe`.  Analytic Jacobians are optional; downstream
    consumers fall back to central finite differences.

    ``time_breakpoints`` lists times where the coefficients are discontinuous
    (e.g. a window factor switching off); the integrator restarts there.
    ``strengthened_integrability`` is the author-asserted flag that the local
    integrability of the Lipschitz moduli holds in the stronger exponents the
    dissipativity theory needs; it is not checkable numerically.
    """

    state_dim: int
    control_dim: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    input_matrix: Callable[[float, np.ndarray], np.ndarray]
    drift_jac: Callable[[float, np.ndarray], np.ndarray] | None = None
    input_jac: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None
    time_breakpoints: tuple[float, ...] = ()
    strengthened_integrability: bool = True

    def rhs(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        a = np.asarray(self.drift(t, x), dtype=float).reshape(self.state_dim)
        b = np.asarray(self.input_matrix(t, x), dtype=float).reshape(
            self.state_dim, self.control_dim
        )
        return a + b @ u

    def rhs_jac_x(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Jacobian of a(t,x) + b(t,x)u with respect to x (analytic or FD)."""
        if self.drift_jac is not None and self.input_jac is not None:
            ja = np.asarray(self.drift_jac(t, x), float).reshape(self.state_dim, self.state_dim)
            jb = np.asarray(self.input_jac(t, x, u), float).reshape(
                self.state_dim, self.state_dim
            )
            return ja + jb
        n = self.state_dim
        jac = np.empty((n, n))
        for i in range(n):
            h = _FD_STEP * (1.0 + abs(float(x[i])))
            xp = x.copy(); xp[i] += h
            xm = x.copy(); xm[i] -= h
            jac[:, i] = (self.rhs(t, xp, u) - self.rhs(t, xm, u)) / (2 * h)
        return jac


@dataclass(eq=False)
class _Segment:
    t0: float
    t1: float
    eval: Callable[[np.ndarray], np.ndarray]  # t array -> (n, k)


@dataclass(eq=False)
class Trajectory:
    """Solution samples plus piecewise dense output from the integrator.

    ``ts``/``xs`` are the accepted nodes; ``segments`` carry the integrator's
    dense interpolants, so ``state(t)`` is continuous on [0, t_end].  When
    finite escape was detected, ``blow_up`` is set and ``blow_up_time`` is the
    (event-localized) time at which |x| reached the escape radius; the
    trajectory covers [0, blow_up_time] only.
    """

    ts: np.ndarray
    xs: np.ndarray
    segments: list[_Segment]
    blow_up: bool = False
    blow_up_time: float | None = None
    escape_radius: float = math.inf
    _starts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._starts = np.array([s.t0 for s in self.segments])

    @property
    def t_end(self) -> float:
        return float(self.ts[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.xs[-1]

    @property
    def state_dim(self) -> int:
        return self.xs.shape[1]

    def segment_boundaries(self) -> np.ndarray:
        return np.array([s.t0 for s in self.segments] + [self.segments[-1].t1])

    def state(self, t):
        """Dense-output evaluation; scalar t -> (n,), array t -> (k, n)."""
        tt = np.asarray(t, dtype=float)
        scalar = tt.ndim == 0
        tt = np.atleast_1d(tt)
        if np.any(tt < -1e-12) or np.any(tt > self.t_end + 1e-9):
            raise ValueError(
                f"time outside trajectory domain [0, {self.t_end}]"
            )
        tt = np.clip(tt, 0.0, self.t_end)
        out = np.empty((tt.size, self.state_dim))
        idx = np.clip(np.searchsorted(self._starts, tt, side="right") - 1, 0, len(self.segments) - 1)
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = np.asarray(self.segments[k].eval(tt[sel])).T
        return out[0] if scalar else out

    def __call__(self, t):
        return self.state(t)

    def sample(self, step: float) -> tuple[np.ndarray, np.ndarray]:
        ts = np.arange(0.0, self.t_end + step * 0.5, step)
        ts[-1] = min(ts[-1], self.t_end)
        return ts, self.state(ts)

    def to_csv(self, path, step: float) -> None:
        ts, xs = self.sample(step)
        header = "t," + ",".join(f"x{i + 1}" for i in range(self.state_dim))
        rows = [header]
        for t, x in zip(ts, xs):
            rows.append(",".join(f"{v:.12g}" for v in (t, *x)))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(rows) + "\n")


def _checked_rhs(system: ControlAffineSystem, u_val: np.ndarray):
    def f(t, x):
        dx = system.rhs(t, x, u_val)
        if not np.all(np.isfinite(dx)):
            raise IntegrationError(f"nonfinite dynamics evaluation at t={t:.6g}")
        return dx

    return f


def integrate(
    system: ControlAffineSystem,
    u: ControlSignal,
    x0,
    span_end: float,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    escape_radius: float = 1e9,
    method: str = "RK45",
) -> Trajectory:
    """Integrate the controlled state equation over [0, span_end].

    The span is split at every control breakpoint and coefficient breakpoint,
    and each smooth segment is integrated with an adaptive embedded
    Runge-Kutta pair with dense output.  A terminal event on
    |x| = escape_radius localizes finite escape; the result then covers
    [0, blow_up_time] with the flag set instead of raising.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != system.state_dim:
        raise ValueError("initial state has wrong dimension")
    if not math.isfinite(span_end) or span_end <= 0:
        raise ValueError("span_end must be finite and positive")
    if escape_radius <= float(np.linalg.norm(x0)):
        raise ValueError("escape_radius must exceed |x0|")

    cuts = set(u.interior_breakpoints(span_end).tolist())
    cuts.update(b for b in system.time_breakpoints if 0.0 < b < span_end)
    edges = np.concatenate(([0.0], np.sort(np.array(sorted(cuts))), [span_end])) if cuts else np.array([0.0, span_end])

    def escape(t, x):
        return float(np.linalg.norm(x)) - escape_radius

    escape.terminal = True
    escape.direction = 1.0

    segments: list[_Segment] = []
    ts_parts = [np.array([0.0])]
    xs_parts = [x0[None, :]]
    x_cur = x0
    blow_up = False
    blow_time = None

    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo <= 0.0:
            continue
        u_val = u.evaluate(0.5 * (lo + hi))
        sol = solve_ivp(
            _checked_rhs(system, u_val),
            (lo, hi),
            x_cur,
            method=method,
            rtol=rtol,
            atol=atol,
            dense_output=True,
            events=escape,
        )
        if sol.status == -1:
            raise IntegrationError(f"integrator failed on [{lo:.6g}, {hi:.6g}]: {sol.message}")
        seg_end = float(sol.t[-1])
        segments.append(_Segment(lo, seg_end, sol.sol))
        ts_parts.append(sol.t[1:])
        xs_parts.append(sol.y.T[1:])
        x_cur = sol.y[:, -1]
        if sol.status == 1:  # escape event fired
            blow_up = True
            blow_time = float(sol.t_events[0][0])
            break

    ts = np.concatenate(ts_parts)
    xs = np.vstack(xs_parts)
    return Trajectory(
        ts=ts,
        xs=xs,
        segments=segments,
        blow_up=blow_up,
        blow_up_time=blow_time,
        escape_radius=escape_radius,
    )


def extend_tail(traj: Trajectory, T: float, span_end: float) -> Trajectory:
    """Append the decaying tail x(t) = x(T) e^{-(t-T)} on (T, span_end].

    This is the admissible-set tail extension: continuous at T, decreasing in
    norm, and solving x' = -x beyond the horizon.
    """
    if traj.blow_up and traj.blow_up_time is not None and traj.blow_up_time < T:
        raise ValueError("trajectory blew up before the horizon; no tail extension")
    if traj.t_end < T - 1e-9:
        raise ValueError("trajectory does not cover [0, T]")
    if span_end <= T:
        raise ValueError("span_end must exceed T")
    xT = traj.state(T)

    def tail_eval(tt: np.ndarray) -> np.ndarray:
        return xT[:, None] * np.exp(-(np.atleast_1d(tt) - T))

    kept = [s for s in traj.segments if s.t0 < T]
    segments = kept + [_Segment(T, span_end, tail_eval)]
    mask = traj.ts <= T + 1e-12
    extra = np.linspace(T, span_end, max(17, int(math.ceil((span_end - T) / 0.25)) + 1))[1:]
    ts = np.concatenate([traj.ts[mask], [T] if traj.ts[mask][-1] < T else [], extra])
    ts = np.unique(ts)
    xs_head = traj.state(ts[ts <= T])
    xs_tail = tail_eval(ts[ts > T]).T
    xs = np.vstack([xs_head, xs_tail])
    return Trajectory(
        ts=ts,
        xs=xs,
        segments=segments,
        blow_up=False,
        blow_up_time=None,
        escape_radius=traj.escape_radius,
    )


@dataclass(frozen=True)
class LipschitzReport:
    max_ratio: float
    witness_pair: tuple[np.ndarray, np.ndarray]
    witness_time: float
    pairs_sampled: int


def lipschitz_probe(
    system: ControlAffineSystem,
    box: tuple,
    time_window: tuple[float, float] = (0.0, 1.0),
    samples: int = 64,
    u=None,
) -> LipschitzReport:
    """Finite-difference Lipschitz spot check of f_u = a + b u on a box.

    Reports the largest ratio |f(t,x1) - f(t,x2)| / |x1 - x2| over sampled
    pairs.  This is a diagnostic for the local Lipschitz hypothesis, not a
    proof; the modulus is only probed on the given compact set.
    """
    lo = np.atleast_1d(np.asarray(box[0], float))
    hi = np.atleast_1d(np.asarray(box[1], float))
    if np.any(lo > hi):
        raise ValueError("box must be nonempty")
    if samples < 2:
        raise ValueError("need at least 2 samples")
    n = system.state_dim
    u_val = np.zeros(system.control_dim) if u is None else np.atleast_1d(np.asarray(u, float))

    per_axis = max(2, int(round(samples ** (1.0 / n))))
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)

    t_grid = np.linspace(time_window[0], time_window[1], 5)
    best = 0.0
    witness = (points[0], points[0])
    w_time = float(t_grid[0])
    pairs = 0
    for t in t_grid:
        vals = np.array([system.rhs(float(t), p, u_val) for p in points])
        if not np.all(np.isfinite(vals)):
            raise ValueError("nonfinite dynamics evaluation during probe")
        for i in range(len(points)):
            dx = points[i + 1 :] - points[i]
            dist = np.linalg.norm(dx, axis=1)
            df = np.linalg.norm(vals[i + 1 :] - vals[i], axis=1)
            ok = dist > 0
            pairs += int(np.count_nonzero(ok))
            if np.any(ok):
                ratios = df[ok] / dist[ok]
                k = int(np.argmax(ratios))
                if ratios[k] > best:
                    best = float(ratios[k])
                    witness = (points[i], points[i + 1 :][ok][k])
                    w_time = float(t)
    return LipschitzReport(best, witness, w_time, pairs)
