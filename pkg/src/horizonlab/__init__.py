"""Numerical lab for finite- vs infinite-horizon optimal control.

Core pipeline: certify dissipativity of the state equation against the
running cost (storage-function grid checks), solve finite-horizon problems by
switching-time optimization and by a direct mesh method, sweep the horizon to
extract the limiting control pattern, and compare the limit against constant
challengers.  A scalar Riccati oracle covers the linear-quadratic special
case.
"""

from .costs import GrowthBound, MKDominator, RunningCost, evaluate_cost
from .dissipativity import (
    StorageCertificate,
    check_coercivity,
    check_differential,
    check_integral,
    uniform_boundedness_probe,
)
from .dynamics import (
    ControlAffineSystem,
    IntegrationError,
    Trajectory,
    extend_tail,
    integrate,
    lipschitz_probe,
)
from .pmp import (
    CostateTrajectory,
    ExtremalTols,
    SwitchingFunction,
    costate_integrate,
    switching_function,
    verify_extremal,
)
from .problems import BUILTIN_PROBLEMS, ProblemInstance, get_problem, problem_names
from .signals import ControlSignal, ControlValueSet, project_onto_U
from .solvers import (
    DirectOpts,
    DiscretizedControl,
    PatternTemplate,
    SolveOpts,
    brute_force_oracle,
    solve_direct,
    solve_switching_times,
)

__version__ = "0.1.0"
