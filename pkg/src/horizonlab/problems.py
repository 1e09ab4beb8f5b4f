"""Problem instances and the built-in registry.

A :class:`ProblemInstance` bundles a control-affine state equation, a
decomposed running cost, an initial state, the control-value set with its
exponent, the tail reference value, and the optional analysis declarations
(storage candidate, pattern template, affine-in-u cost coefficient, singular
arc residual, vectorized fast paths for the brute-force oracle).

Five problems ship built in:

=================  ==========================================================
``ex41``           x' = (1-u)x, cost 4|u| + |x|, u in [0,2]: bang-bang
                   effort/size tradeoff with a logarithmic storage candidate.
``ex42``           x' = (1-u)x, discounted cost (|u|/3 + |x|) e^{-2t},
                   u in [0,2]: bang-singular-bang structure; no coercive
                   storage candidate exists for it.
``ex24``           x' = ux, sign-indefinite cost (u-1)x, u in [0,1]: the
                   classic case where finite-horizon limits mislead.
``counterexample`` x' = u x^2 on the time window t <= 1, cost e^{-t} u,
                   u in [0,1]: finite escape under u = 1 and a bounded,
                   non-coercive storage candidate.
``lqr``            scalar x' = u with cost x^2 + u^2 (p = 2): the regulator
                   baseline with a closed-form feedback oracle.
=================  ==========================================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dynamics as dyn
from .costs import GrowthBound, MKDominator, RunningCost
from .dissipativity import StorageCertificate
from .signals import ControlSignal, ControlValueSet
from .solvers import PatternTemplate

__all__ = ["ProblemInstance", "BUILTIN_PROBLEMS", "get_problem", "problem_names"]


@dataclass(eq=False)
class ProblemInstance:
    """One optimal-control problem plus its analysis declarations."""

    name: str
    system: dyn.ControlAffineSystem
    cost: RunningCost
    x0: np.ndarray
    control_set: ControlValueSet
    u_star: np.ndarray
    template: PatternTemplate | None = None
    storage: StorageCertificate | None = None
    escape_radius: float = 1e9
    ell_u_coeff: Callable[[float, np.ndarray], np.ndarray] | None = None
    singular_state_residual: Callable[[float, np.ndarray], float] | None = None
    decomposition_declared: bool = True
    challengers: tuple | None = None
    rhs_vec: Callable | None = None
    ell_vec: Callable | None = None
    description: str = ""

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, float))
        self.u_star = np.atleast_1d(np.asarray(self.u_star, float))
        if math.isinf(self.control_set.p):
            if not self.control_set.contains(self.u_star):
                raise ValueError("tail value must lie in U when p = inf")
        elif np.any(self.u_star != 0.0):
            raise ValueError("tail value must be 0 when p < inf")
        if self.rhs_vec is None:
            self.rhs_vec = self._rhs_vec_fallback
        if self.ell_vec is None:
            self.ell_vec = self._ell_vec_fallback

    def _rhs_vec_fallback(self, t, X, u):
        return np.array([self.system.rhs(t, x, u) for x in np.atleast_2d(X)])

    def _ell_vec_fallback(self, t, X, u):
        return np.array([self.cost.ell(t, x, u) for x in np.atleast_2d(X)])

    @property
    def p(self) -> float:
        return self.control_set.p

    def integrate(self, u: ControlSignal, span_end: float, rtol: float = 1e-10,
                  atol: float = 1e-12, escape_radius: float | None = None) -> dyn.Trajectory:
        return dyn.integrate(
            self.system, u, self.x0, span_end, rtol=rtol, atol=atol,
            escape_radius=self.escape_radius if escape_radius is None else escape_radius,
        )

    def challenger_values(self) -> list[np.ndarray]:
        """Constant controls to pit against a limit control: box vertices plus the tail value."""
        if self.challengers is not None:
            vals = [np.atleast_1d(np.asarray(c, float)) for c in self.challengers]
        else:
            vals = self.control_set.vertices()
            vals.append(self.u_star)
        seen: list[np.ndarray] = []
        for v in vals:
            if not any(np.allclose(v, w) for w in seen):
                seen.append(v)
        return seen


def _sign(x: float) -> float:
    # subgradient convention for |.|: sign(0) = 0
    return 0.0 if x == 0.0 else math.copysign(1.0, x)


# --- ex41 -------------------------------------------------------------------

def _build_ex41() -> ProblemInstance:
    system = dyn.ControlAffineSystem(
        state_dim=1,
        control_dim=1,
        drift=lambda t, x: np.array([x[0]]),
        input_matrix=lambda t, x: np.array([[-x[0]]]),
        drift_jac=lambda t, x: np.array([[1.0]]),
        input_jac=lambda t, x, u: np.array([[-u[0]]]),
    )
    cost = RunningCost(
        ell1=lambda t, x: abs(x[0]),
        ell2=lambda t, x, u: 4.0 * abs(u[0]),
        grad_x=lambda t, x, u: np.array([_sign(x[0])]),
        grad_u=lambda t, x, u: np.array([4.0 * _sign(u[0]) if u[0] != 0.0 else 4.0]),
        mK=MKDominator(lambda t, lo, hi: 0.0),
    )
    U = ControlValueSet.box([0.0], [2.0])
    storage = StorageCertificate(
        S=lambda x: math.log(abs(x[0]) + 1.0),
        grad=lambda x: np.array([_sign(x[0]) / (abs(x[0]) + 1.0)]),
        supply=lambda t, x, u: 4.0 * abs(u[0]) + abs(x[0]),
        domain_box=([-100.0], [100.0]),
        name="log(1+|x|)",
    )
    return ProblemInstance(
        name="ex41",
        system=system,
        cost=cost,
        x0=[1.0],
        control_set=U,
        u_star=[0.0],
        template=PatternTemplate(values=[[2.0], [0.0]]),
        storage=storage,
        ell_u_coeff=lambda t, x: np.array([4.0]),
        rhs_vec=lambda t, X, u: (1.0 - u[0]) * X,
        ell_vec=lambda t, X, u: 4.0 * abs(u[0]) + np.abs(X[:, 0]),
        description="bang-bang tradeoff: control effort 4|u| vs state size |x| for x'=(1-u)x",
    )


# --- ex42 -------------------------------------------------------------------

def _build_ex42() -> ProblemInstance:
    system = dyn.ControlAffineSystem(
        state_dim=1,
        control_dim=1,
        drift=lambda t, x: np.array([x[0]]),
        input_matrix=lambda t, x: np.array([[-x[0]]]),
        drift_jac=lambda t, x: np.array([[1.0]]),
        input_jac=lambda t, x, u: np.array([[-u[0]]]),
    )
    cost = RunningCost(
        ell1=lambda t, x: abs(x[0]) * math.exp(-2.0 * t),
        ell2=lambda t, x, u: (abs(u[0]) / 3.0) * math.exp(-2.0 * t),
        grad_x=lambda t, x, u: np.array([_sign(x[0]) * math.exp(-2.0 * t)]),
        grad_u=lambda t, x, u: np.array(
            [(_sign(u[0]) if u[0] != 0.0 else 1.0) * math.exp(-2.0 * t) / 3.0]
        ),
        mK=MKDominator(lambda t, lo, hi: 0.0),
    )
    U = ControlValueSet.box([0.0], [2.0])
    return ProblemInstance(
        name="ex42",
        system=system,
        cost=cost,
        x0=[1.0],
        control_set=U,
        u_star=[0.0],
        template=PatternTemplate(values=[[2.0], [1.0], [0.0]]),
        storage=None,  # no coercive storage candidate exists for this supply
        ell_u_coeff=lambda t, x: np.array([math.exp(-2.0 * t) / 3.0]),
        singular_state_residual=lambda t, x: abs(x[0] - 2.0 / 3.0),
        rhs_vec=lambda t, X, u: (1.0 - u[0]) * X,
        ell_vec=lambda t, X, u: (abs(u[0]) / 3.0 + np.abs(X[:, 0])) * np.exp(-2.0 * t),
        description="discounted effort/size tradeoff with a singular arc at x = 2/3",
    )


# --- ex24 (sign-indefinite counterexample) ----------------------------------

def _build_ex24() -> ProblemInstance:
    system = dyn.ControlAffineSystem(
        state_dim=1,
        control_dim=1,
        drift=lambda t, x: np.array([0.0]),
        input_matrix=lambda t, x: np.array([[x[0]]]),
        drift_jac=lambda t, x: np.array([[0.0]]),
        input_jac=lambda t, x, u: np.array([[u[0]]]),
    )
    cost = RunningCost(
        ell1=lambda t, x: 0.0,
        ell2=lambda t, x, u: (u[0] - 1.0) * x[0],
        grad_x=lambda t, x, u: np.array([u[0] - 1.0]),
        grad_u=lambda t, x, u: np.array([x[0]]),
        sign_indefinite=True,
    )
    U = ControlValueSet.box([0.0], [1.0])
    return ProblemInstance(
        name="ex24",
        system=system,
        cost=cost,
        x0=[1.0],
        control_set=U,
        u_star=[0.0],
        template=PatternTemplate(values=[[1.0], [0.0]]),
        storage=None,
        escape_radius=1e15,  # x <= e^t; keep long sign-indefinite truncations feasible
        ell_u_coeff=lambda t, x: np.array([x[0]]),
        decomposition_declared=False,
        rhs_vec=lambda t, X, u: u[0] * X,
        ell_vec=lambda t, X, u: (u[0] - 1.0) * X[:, 0],
        description="sign-indefinite cost (u-1)x on x'=ux: finite-horizon optima mislead in the limit",
    )


# --- finite-escape counterexample -------------------------------------------

def _build_counterexample() -> ProblemInstance:
    # The growth window is the closed interval t <= 1 (a measure-zero
    # distinction for integrals, but it lets grid checks attain the supply
    # ratio extremum exactly at t = 1).
    def window(t: float) -> float:
        return 1.0 if t <= 1.0 else 0.0

    system = dyn.ControlAffineSystem(
        state_dim=1,
        control_dim=1,
        drift=lambda t, x: np.array([0.0]),
        input_matrix=lambda t, x: np.array([[window(t) * x[0] ** 2]]),
        drift_jac=lambda t, x: np.array([[0.0]]),
        input_jac=lambda t, x, u: np.array([[2.0 * window(t) * u[0] * x[0]]]),
        time_breakpoints=(1.0,),
    )
    cost = RunningCost(
        ell1=lambda t, x: 0.0,
        ell2=lambda t, x, u: math.exp(-t) * abs(u[0]),
        grad_x=lambda t, x, u: np.array([0.0]),
        grad_u=lambda t, x, u: np.array([math.exp(-t)]),
        mK=MKDominator(lambda t, lo, hi: 0.0),
    )
    U = ControlValueSet.box([0.0], [1.0])
    e1 = math.exp(-1.0)
    storage = StorageCertificate(
        S=lambda x: e1 / (1.0 + x[0] ** 2),
        grad=lambda x: np.array([-2.0 * e1 * x[0] / (1.0 + x[0] ** 2) ** 2]),
        supply=lambda t, x, u: math.exp(-t) * abs(u[0]),
        domain_box=([-50.0], [50.0]),
        name="e^{-1}/(1+x^2)",
    )
    return ProblemInstance(
        name="counterexample",
        system=system,
        cost=cost,
        x0=[1.0],
        control_set=U,
        u_star=[0.0],
        template=PatternTemplate(values=[[1.0], [0.0]]),
        storage=storage,
        ell_u_coeff=lambda t, x: np.array([math.exp(-t)]),
        rhs_vec=lambda t, X, u: (u[0] * (1.0 if t <= 1.0 else 0.0)) * X**2,
        ell_vec=lambda t, X, u: np.full(X.shape[0], math.exp(-t) * abs(u[0])),
        description="x' = u x^2 on t <= 1: bounded costs, unbounded states, finite escape at u = 1",
    )


# --- scalar linear-quadratic regulator ---------------------------------------

def _build_lqr() -> ProblemInstance:
    system = dyn.ControlAffineSystem(
        state_dim=1,
        control_dim=1,
        drift=lambda t, x: np.array([0.0]),
        input_matrix=lambda t, x: np.array([[1.0]]),
        drift_jac=lambda t, x: np.array([[0.0]]),
        input_jac=lambda t, x, u: np.array([[0.0]]),
    )
    cost = RunningCost(
        ell1=lambda t, x: x[0] ** 2,
        ell2=lambda t, x, u: u[0] ** 2,
        grad_x=lambda t, x, u: np.array([2.0 * x[0]]),
        grad_u=lambda t, x, u: np.array([2.0 * u[0]]),
        growth=GrowthBound(alpha=1.0, gamma=lambda t: 0.0, gamma_l1=0.0),
        mK=MKDominator(lambda t, lo, hi: 0.0),
    )
    U = ControlValueSet.full_space(1, p=2.0)
    storage = StorageCertificate(
        S=lambda x: 0.5 * x[0] ** 2,
        grad=lambda x: np.array([x[0]]),
        supply=lambda t, x, u: x[0] ** 2 + u[0] ** 2,
        domain_box=([-10.0], [10.0]),
        name="x^2/2",
    )
    return ProblemInstance(
        name="lqr",
        system=system,
        cost=cost,
        x0=[1.0],
        control_set=U,
        u_star=[0.0],
        template=None,
        storage=storage,
        challengers=([0.0],),
        rhs_vec=lambda t, X, u: np.full_like(X, u[0]),
        ell_vec=lambda t, X, u: X[:, 0] ** 2 + u[0] ** 2,
        description="scalar integrator with quadratic cost: the regulator baseline (p = 2)",
    )


BUILTIN_PROBLEMS: dict[str, Callable[[], ProblemInstance]] = {
    "ex41": _build_ex41,
    "ex42": _build_ex42,
    "ex24": _build_ex24,
    "counterexample": _build_counterexample,
    "lqr": _build_lqr,
}


def problem_names() -> list[str]:
    return sorted(BUILTIN_PROBLEMS)


def get_problem(name: str) -> ProblemInstance:
    try:
        return BUILTIN_PROBLEMS[name]()
    except KeyError:
        raise KeyError(
            f"unknown problem {name!r}; built-ins: {', '.join(problem_names())}"
        ) from None
