"""Piecewise-constant control signals and control-value sets.

Admissible controls are step functions

    u(t) = u_j   for t in [tau_{j-1}, tau_j),   j = 1..N,

on a finite horizon [0, T], extended by a fixed tail value for t > T.  The
half-open convention is global: the value at an interior breakpoint belongs
to the piece on the right, and the value at t = T itself is the tail value
(a measure-zero choice that keeps evaluation deterministic).  Coincident
breakpoints are allowed; the resulting empty pieces are inert.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ControlValueSet", "ControlSignal", "project_onto_U"]


def _as_vector(v, dim: int | None = None) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.ndim != 1:
        raise ValueError(f"expected a vector, got shape {a.shape}")
    if dim is not None and a.size != dim:
        raise ValueError(f"expected dimension {dim}, got {a.size}")
    return a


@dataclass(frozen=True, eq=False)
class ControlValueSet:
    """Control-value set U: either all of R^m or a compact box.

    ``p`` is the integrability exponent of the ambient control space.
    p = inf requires a box (compactness); finite p requires the full space,
    matching the two admissibility regimes the cost hypotheses distinguish.
    """

    dim: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    p: float = math.inf

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("control dimension must be >= 1")
        if not (1.0 < self.p):
            raise ValueError("exponent p must lie in (1, inf]")
        if (self.lower is None) != (self.upper is None):
            raise ValueError("box needs both lower and upper bounds")
        if self.lower is not None:
            lo = _as_vector(self.lower, self.dim)
            hi = _as_vector(self.upper, self.dim)
            if np.any(lo > hi):
                raise ValueError("box requires lower <= upper componentwise")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("box bounds must be finite (compactness)")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
            if math.isfinite(self.p):
                raise ValueError("finite p requires the full-space control set")
        else:
            if math.isinf(self.p):
                raise ValueError("p = inf requires a compact box control set")

    @classmethod
    def box(cls, lower, upper, p: float = math.inf) -> "ControlValueSet":
        lo = _as_vector(lower)
        return cls(dim=lo.size, lower=lo, upper=_as_vector(upper, lo.size), p=p)

    @classmethod
    def full_space(cls, dim: int, p: float = 2.0) -> "ControlValueSet":
        return cls(dim=dim, lower=None, upper=None, p=p)

    @property
    def is_box(self) -> bool:
        return self.lower is not None

    def contains(self, v, tol: float = 1e-9) -> bool:
        a = _as_vector(v, self.dim)
        if not self.is_box:
            return bool(np.all(np.isfinite(a)))
        return bool(np.all(a >= self.lower - tol) and np.all(a <= self.upper + tol))

    def project(self, v) -> np.ndarray:
        """Euclidean projection onto U (componentwise clamp for a box)."""
        a = _as_vector(v, self.dim)
        if not self.is_box:
            return a
        return np.clip(a, self.lower, self.upper)

    def vertices(self) -> list[np.ndarray]:
        """Corners of the box; empty list for the full space."""
        if not self.is_box:
            return []
        out = []
        for mask in range(2 ** self.dim):
            corner = np.where(
                [(mask >> i) & 1 for i in range(self.dim)], self.upper, self.lower
            ).astype(float)
            out.append(corner)
        return out


def project_onto_U(v, U: ControlValueSet) -> np.ndarray:
    """Project a control vector onto U; raises on dimension mismatch."""
    return U.project(v)


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Step control on [0, T] plus a constant tail value on (T, inf).

    ``breakpoints`` is the nondecreasing vector (tau_0, ..., tau_N) with
    tau_0 = 0 and tau_N = T; ``values`` holds one row per piece.  For an
    infinite horizon the final breakpoint is +inf and the tail value is
    unused (the last piece already covers [tau_{N-1}, inf)).
    """

    breakpoints: np.ndarray
    values: np.ndarray
    tail_value: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if bp.ndim != 1 or bp.size < 2:
            raise ValueError("need at least two breakpoints (0 and T)")
        if bp[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if np.any(np.diff(bp) < 0):
            raise ValueError("breakpoints must be nondecreasing")
        if vals.shape[0] != bp.size - 1:
            raise ValueError("need one piece value per interval")
        tail = self.tail_value
        if tail is None:
            tail = np.zeros(vals.shape[1])
        tail = _as_vector(tail, vals.shape[1])
        for a in (bp, vals, tail):
            a.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tail_value", tail)

    @classmethod
    def pattern(cls, breakpoints, values, tail_value=None) -> "ControlSignal":
        return cls(np.asarray(breakpoints, float), np.asarray(values, float), tail_value)

    @classmethod
    def constant(cls, value, T: float = math.inf, tail_value=None) -> "ControlSignal":
        v = _as_vector(value)
        return cls(np.array([0.0, T]), v[None, :], tail_value)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def num_pieces(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> float:
        return float(self.breakpoints[-1])

    def __call__(self, t):
        return self.evaluate(t)

    def evaluate(self, t):
        """Value at time t (scalar -> (m,), array -> (k, m)).

        Half-open pieces: at an interior breakpoint the right piece wins; at
        and beyond a finite T the tail value is returned.
        """
        tt = np.asarray(t, dtype=float)
        scalar = tt.ndim == 0
        tt = np.atleast_1d(tt)
        if np.any(tt < 0):
            raise ValueError("signal evaluation requires t >= 0")
        idx = np.searchsorted(self.breakpoints, tt, side="right")
        out = np.empty((tt.size, self.dim))
        piece = np.clip(idx - 1, 0, self.num_pieces - 1)
        out[:] = self.values[piece]
        beyond = idx > self.num_pieces  # t >= T (finite T only)
        if np.any(beyond):
            out[beyond] = self.tail_value
        return out[0] if scalar else out

    def interior_breakpoints(self, t_end: float | None = None) -> np.ndarray:
        """Strictly increasing finite breakpoints in the open interval (0, t_end)."""
        hi = self.T if t_end is None else min(self.T, t_end)
        bp = self.breakpoints[1:-1] if math.isfinite(self.T) else self.breakpoints[1:]
        bp = bp[np.isfinite(bp)]
        bp = bp[(bp > 0.0) & (bp < hi)]
        return np.unique(bp)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "breakpoints": [float(b) for b in self.breakpoints],
            "piece_values": [[float(v) for v in row] for row in self.values],
            "tail_value": [float(v) for v in self.tail_value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ControlSignal":
        return cls.pattern(d["breakpoints"], d["piece_values"], d["tail_value"])

    def within(self, U: ControlValueSet, tol: float = 1e-9) -> bool:
        ok = all(U.contains(v, tol) for v in self.values)
        if math.isfinite(self.T):
            ok = ok and (U.contains(self.tail_value, tol) or np.allclose(self.tail_value, 0.0))
        return ok
