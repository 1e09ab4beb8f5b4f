"""Horizon sweeps: solve a family of growing horizons and extract the limit.

For each horizon T_k the switching-time solver produces breakpoints tau^k and
piece values u^k of a fixed template.  The sweep classifies every breakpoint
sequence as converging to a finite limit, diverging to +inf, or undetermined,
assembles the limit control (dropping pieces that collapse to empty
intervals), estimates its infinite-horizon cost by monotone truncations, and
pits it against constant challenger controls.  Together with the hypothesis
checklist this yields the pattern-preservation verdict for the problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dissipativity as dcert
from .costs import check_C1_growth, check_mK_domination, evaluate_cost
from .dynamics import IntegrationError
from .signals import ControlSignal
from .solvers import PatternTemplate, SolveOpts, solve_switching_times

__all__ = [
    "SweepOpts",
    "HorizonEntry",
    "PatternResult",
    "HypothesisChecklist",
    "CostEstimate",
    "PreservationReport",
    "EquicoercivityReport",
    "horizon_sweep",
    "limit_control",
    "infinite_cost_estimate",
    "pattern_preservation_report",
    "equicoercivity_probe",
    "build_checklist",
    "pattern_result_csv",
]

FINITE_LIMIT = "finite-limit"
DIVERGES = "diverges-to-inf"
UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class SweepOpts:
    conv_tol: float = 1e-3
    ratio_floor: float = 0.05
    warm_start: bool = True
    solver: SolveOpts = field(default_factory=SolveOpts)
    warm_starts: int = 2  # multistarts used once a warm start is available


@dataclass(eq=False)
class HorizonEntry:
    T: float
    ok: bool
    taus: np.ndarray | None
    values: np.ndarray | None
    cost: float
    message: str = ""


@dataclass(eq=False)
class PatternResult:
    horizons: np.ndarray
    entries: list[HorizonEntry]
    flags: list[str]
    limit_breakpoints: np.ndarray
    limit_values: np.ndarray
    conv_tol: float

    def successful(self) -> list[HorizonEntry]:
        return [e for e in self.entries if e.ok]


def _classify(taus_k: np.ndarray, horizons: np.ndarray, conv_tol: float, ratio_floor: float):
    """Limit classification for one breakpoint sequence, in the extended reals.

    Cauchy tails converge to a finite limit; sequences that keep increasing
    with either a convergent offset T_k - tau_k or a ratio tau_k/T_k bounded
    away from zero diverge to +inf; anything else is undetermined.
    """
    k = taus_k.size
    if k < 2:
        return UNDETERMINED, math.nan
    tail = min(4, k)
    ts = taus_k[-tail:]
    hs = horizons[-tail:]
    diffs = np.abs(np.diff(ts))
    if np.all(diffs < conv_tol):
        return FINITE_LIMIT, float(ts[-1])
    increasing = np.all(np.diff(ts) > -conv_tol) and (ts[-1] - taus_k[0]) > conv_tol
    offset_conv = np.all(np.abs(np.diff(hs - ts)) < conv_tol)
    ratio_ok = np.min(ts / np.maximum(hs, 1e-300)) >= ratio_floor
    if increasing and (offset_conv or ratio_ok):
        return DIVERGES, math.inf
    return UNDETERMINED, math.nan


def horizon_sweep(problem, template: PatternTemplate, horizons, opts: SweepOpts | None = None) -> PatternResult:
    """Solve the template problem for each horizon and classify the limits."""
    opts = opts or SweepOpts()
    horizons = np.asarray(sorted(float(T) for T in horizons))
    if horizons.size < 2 or np.any(np.diff(horizons) <= 0):
        raise ValueError("need at least two strictly increasing horizons")
    entries: list[HorizonEntry] = []
    warm = None
    for T in horizons:
        sopts = opts.solver
        if warm is not None and opts.warm_start:
            sopts = SolveOpts(**{**sopts.__dict__, "starts": opts.warm_starts})
        try:
            res = solve_switching_times(problem, template, float(T), sopts, warm_start=warm)
            entries.append(HorizonEntry(float(T), True, res.taus, res.values, res.cost))
            if opts.warm_start:
                # affine continuation: the final gap absorbs the horizon growth
                warm = res.taus.copy()
        except (IntegrationError, ValueError) as exc:  # per-entry failure, sweep continues
            entries.append(HorizonEntry(float(T), False, None, None, math.nan, str(exc)))

    good = [e for e in entries if e.ok]
    n_int = template.num_pieces - 1
    flags: list[str] = []
    limits = np.empty(n_int + 1)
    if good:
        hs = np.array([e.T for e in good])
        for j in range(n_int):
            seq = np.array([e.taus[j] for e in good])
            flag, lim = _classify(seq, hs, opts.conv_tol, opts.ratio_floor)
            flags.append(flag)
            limits[j] = lim
    else:
        flags = [UNDETERMINED] * n_int
        limits[:] = math.nan
    limits[n_int] = math.inf  # the final breakpoint tracks T_k itself
    lim_vals = good[-1].values if good else template.values
    return PatternResult(
        horizons=horizons,
        entries=entries,
        flags=flags,
        limit_breakpoints=limits,
        limit_values=np.asarray(lim_vals, float),
        conv_tol=opts.conv_tol,
    )


def limit_control(result: PatternResult, u_star=None) -> ControlSignal:
    """Assemble the limit signal from classified breakpoints, dropping empty pieces."""
    if any(f == UNDETERMINED for f in result.flags):
        raise ValueError(
            "undetermined breakpoint limits; extend the horizon family and re-sweep"
        )
    bp = np.concatenate(([0.0], result.limit_breakpoints))
    vals = result.limit_values
    keep_bp = [0.0]
    keep_vals = []
    for j in range(vals.shape[0]):
        lo, hi = bp[j], bp[j + 1]
        if math.isinf(lo):
            break  # [inf, inf) and later pieces are empty
        if hi - lo <= 0.0:
            continue
        keep_vals.append(vals[j])
        keep_bp.append(hi)
        if math.isinf(hi):
            break
    if not keep_vals:
        # every interior limit collapsed to 0: the final piece covers [0, inf)
        keep_vals = [vals[-1]]
        keep_bp = [0.0, math.inf]
    tail = np.zeros(vals.shape[1]) if u_star is None else u_star
    return ControlSignal(np.asarray(keep_bp), np.asarray(keep_vals), tail)


@dataclass(eq=False)
class CostEstimate:
    truncations: dict
    increments: list[float]
    tail_bound: float | None
    J_inf: float | None
    diverged: str | None  # None | "+inf" | "-inf"
    infeasible: bool
    extrapolated: bool

    @property
    def comparable_value(self) -> float:
        if self.infeasible or self.diverged == "+inf":
            return math.inf
        if self.diverged == "-inf":
            return -math.inf
        if self.J_inf is not None:
            return self.J_inf
        return list(self.truncations.values())[-1]


def infinite_cost_estimate(problem, u: ControlSignal, truncations, quad_tol: float = 1e-9) -> CostEstimate:
    """Monotone truncated costs of an infinite-horizon control, with tail handling.

    Nonnegative costs: increments that keep a steady per-unit-time rate are
    divergence evidence (+inf); geometrically shrinking increments are
    extrapolated by their observed ratio, using the m_K tail bound instead
    whenever the signal's own tail value equals the reference value.  Costs
    flagged sign-indefinite only report truncated values (with a -inf
    divergence note when they keep falling); no extrapolation is attempted.
    A trajectory that escapes in finite time makes the pair infeasible for
    the limit problem: the estimate is +inf.
    """
    Ts = sorted(float(T) for T in truncations)
    if len(Ts) < 2:
        raise ValueError("need at least two truncation horizons")
    T_max = Ts[-1]
    try:
        traj = problem.integrate(u, T_max, rtol=1e-10, atol=1e-12)
    except IntegrationError:
        return CostEstimate({}, [], None, None, "+inf", True, False)
    if traj.blow_up:
        vals = {T: evaluate_cost(problem.cost, traj, u, T, quad_tol) for T in Ts if T < traj.blow_up_time}
        return CostEstimate(vals, [], None, None, "+inf", True, False)

    vals = {T: evaluate_cost(problem.cost, traj, u, T, quad_tol) for T in Ts}
    series = [vals[T] for T in Ts]
    if any(math.isinf(v) for v in series):
        return CostEstimate(vals, [], None, math.inf, "+inf", False, False)
    incs = [b - a for a, b in zip(series[:-1], series[1:])]
    rates = [inc / (Tb - Ta) for inc, Ta, Tb in zip(incs, Ts[:-1], Ts[1:])]

    if problem.cost.sign_indefinite:
        diverged = None
        floor = max(100.0 * quad_tol, 1e-8)
        if all(r < -floor for r in rates):
            diverged = "-inf"
        elif all(r > floor for r in rates):
            diverged = "+inf"
        return CostEstimate(vals, incs, None, None, diverged, False, False)

    floor = max(100.0 * quad_tol, 1e-8)
    if rates[-1] > floor and rates[-1] > 0.5 * rates[0]:
        return CostEstimate(vals, incs, None, None, "+inf", False, False)

    tail = None
    if problem.cost.mK is not None and np.allclose(u.evaluate(T_max * 1.01), problem.u_star):
        from scipy.integrate import quad

        lo_box = np.min(traj.xs, axis=0) - 1.0
        hi_box = np.max(traj.xs, axis=0) + 1.0
        tail, _ = quad(lambda t: float(problem.cost.mK.fn(t, lo_box, hi_box)), T_max, 10 * T_max, limit=200)
    if tail is None and len(incs) >= 2 and incs[-2] > 0 and incs[-1] >= 0:
        rho = incs[-1] / incs[-2]
        if rho < 0.95:
            tail = incs[-1] * rho / (1.0 - rho)
    if tail is None:
        tail = 0.0
        extrapolated = incs[-1] <= floor * (Ts[-1] - Ts[-2])
    else:
        extrapolated = True
    return CostEstimate(vals, incs, tail, series[-1] + tail, None, False, extrapolated)


@dataclass(frozen=True)
class HypothesisChecklist:
    dissipativity_evidence: bool
    storage_coercivity_evidence: bool
    decomposition_declared: bool
    mK_domination: bool
    growth_or_compact: bool
    assumption_strengthened: bool
    details: dict

    @property
    def predicted(self) -> bool:
        return (
            self.dissipativity_evidence
            and self.storage_coercivity_evidence
            and self.decomposition_declared
            and self.mK_domination
            and self.growth_or_compact
            and self.assumption_strengthened
        )

    def as_dict(self) -> dict:
        return {
            "dissipativity_evidence": self.dissipativity_evidence,
            "storage_coercivity_evidence": self.storage_coercivity_evidence,
            "decomposition_declared": self.decomposition_declared,
            "mK_domination": self.mK_domination,
            "growth_or_compact": self.growth_or_compact,
            "assumption_strengthened": self.assumption_strengthened,
            "predicted": self.predicted,
        }


def build_checklist(problem, points_per_axis: int = 33, refine_rounds: int = 2) -> HypothesisChecklist:
    """Run the executable hypothesis checks for the pattern-preservation claim."""
    details: dict = {}
    diff_ok = False
    coer_ok = False
    if problem.storage is not None:
        rep = dcert.check_differential(
            problem.storage,
            problem.system,
            problem.control_set,
            points_per_axis=points_per_axis,
            refine_rounds=refine_rounds,
            u_grid=None if problem.control_set.is_box else np.linspace(-10, 10, 21)[:, None],
        )
        diff_ok = rep.ok
        details["differential"] = rep.summary_record()
        crep = dcert.check_coercivity(problem.storage, state_dim=problem.system.state_dim)
        coer_ok = crep.verdict == "coercive-evidence"
        details["coercivity"] = crep.verdict
    else:
        details["differential"] = "no storage candidate declared"
        details["coercivity"] = "no storage candidate declared"

    decomposition = problem.decomposition_declared and not problem.cost.sign_indefinite

    mk_ok = False
    if problem.cost.mK is not None:
        box = problem.storage.domain_box if problem.storage else ([-10.0] * problem.system.state_dim, [10.0] * problem.system.state_dim)
        mrep = check_mK_domination(problem.cost, box, np.linspace(0.0, 5.0, 11), problem.u_star)
        mk_ok = mrep.ok
        details["mK"] = {"ok": mrep.ok, "worst_gap": mrep.worst_gap}
    else:
        details["mK"] = "no dominator declared"

    if math.isinf(problem.p):
        growth_ok = problem.control_set.is_box
        details["growth"] = "compact control set (p = inf)"
    else:
        if problem.cost.growth is None:
            growth_ok = False
            details["growth"] = "no growth bound declared"
        else:
            grep = check_C1_growth(
                problem.cost,
                problem.p,
                np.linspace(0.0, 5.0, 5),
                np.linspace(-5.0, 5.0, 11)[:, None],
                np.linspace(-10.0, 10.0, 21)[:, None],
            )
            growth_ok = grep.ok
            details["growth"] = {"ok": grep.ok, "worst_margin": grep.worst_margin}

    return HypothesisChecklist(
        dissipativity_evidence=diff_ok,
        storage_coercivity_evidence=coer_ok,
        decomposition_declared=decomposition,
        mK_domination=mk_ok,
        growth_or_compact=growth_ok,
        assumption_strengthened=problem.system.strengthened_integrability,
        details=details,
    )


@dataclass(eq=False)
class PreservationReport:
    checklist: HypothesisChecklist
    sweep: PatternResult
    limit: ControlSignal | None
    limit_estimate: CostEstimate | None
    challenger_estimates: dict
    verdict: str
    compare_tol: float


def pattern_preservation_report(
    problem,
    template: PatternTemplate,
    horizons,
    challenger_controls=None,
    truncations=None,
    opts: SweepOpts | None = None,
    compare_tol: float = 1e-6,
) -> PreservationReport:
    """Combine the hypothesis checklist with an empirical limit-vs-challenger test.

    Verdicts: predicted-and-confirmed, predicted-unconfirmed,
    not-predicted-counterexample-found, not-predicted-no-counterexample.
    The challenger set defaults to the constant vertex controls plus the tail
    reference value; no finite test covers all admissible controls, which the
    verdict names make explicit.
    """
    opts = opts or SweepOpts()
    checklist = build_checklist(problem)
    sweep = horizon_sweep(problem, template, horizons, opts)
    T_max = float(np.max(sweep.horizons))
    if truncations is None:
        truncations = [0.5 * T_max, T_max, T_max * 4.0 / 3.0]

    limit = None
    limit_est = None
    try:
        limit = limit_control(sweep, u_star=problem.u_star)
        limit_est = infinite_cost_estimate(problem, limit, truncations)
    except ValueError:
        pass

    challengers = {}
    if challenger_controls is None:
        challenger_controls = [
            ControlSignal.constant(v, T=math.inf) for v in problem.challenger_values()
        ]
    for sig in challenger_controls:
        key = "u=" + ",".join(f"{v:g}" for v in np.atleast_1d(sig.values[0]))
        challengers[key] = infinite_cost_estimate(problem, sig, truncations)

    if limit_est is None:
        verdict = "predicted-unconfirmed" if checklist.predicted else "not-predicted-no-counterexample"
    else:
        v_lim = limit_est.comparable_value
        beaten = any(
            est.comparable_value < v_lim - compare_tol for est in challengers.values()
        )
        if checklist.predicted:
            verdict = "predicted-unconfirmed" if beaten else "predicted-and-confirmed"
        else:
            verdict = (
                "not-predicted-counterexample-found" if beaten else "not-predicted-no-counterexample"
            )
    return PreservationReport(
        checklist=checklist,
        sweep=sweep,
        limit=limit,
        limit_estimate=limit_est,
        challenger_estimates=challengers,
        verdict=verdict,
        compare_tol=compare_tol,
    )


@dataclass(eq=False)
class EquicoercivityReport:
    records: list[dict]
    bound: float | None
    verdict: str  # "bounded" | "unbounded" | "inconclusive"


def equicoercivity_probe(problem, horizons, cost_cap: float, sample_controls, opts=None) -> EquicoercivityReport:
    """State-sup growth of cost-capped samples across the horizon family.

    Pairs whose cost exceeds the cap are excluded (reported).  The verdict is
    ``bounded`` when the included sups show no growth trend across horizons,
    ``unbounded`` when they keep growing.
    """
    horizons = sorted(float(T) for T in horizons)
    samples = list(sample_controls)
    if len(samples) != len(horizons):
        raise ValueError("need one sample control per horizon")
    records = []
    sups = []
    for T, sig in zip(horizons, samples):
        traj = problem.integrate(sig, T, rtol=1e-9, atol=1e-11)
        if traj.blow_up:
            records.append({"T": T, "cost": math.inf, "state_sup": math.inf, "included": False})
            sups.append(math.inf)
            continue
        cost = evaluate_cost(problem.cost, traj, sig, T)
        ts = np.linspace(0.0, T, 801)
        sup = float(np.max(np.linalg.norm(traj.state(ts), axis=1)))
        included = cost <= cost_cap + 1e-9
        records.append({"T": T, "cost": cost, "state_sup": sup, "included": included})
        if included:
            sups.append(sup)
    if len(sups) < 2:
        return EquicoercivityReport(records, None, "inconclusive")
    if any(math.isinf(s) for s in sups):
        return EquicoercivityReport(records, None, "unbounded")
    half = max(1, len(sups) // 2)
    early = max(sups[:half])
    late = max(sups[-half:])
    if late > 2.0 * early + 1e-9:
        return EquicoercivityReport(records, None, "unbounded")
    return EquicoercivityReport(records, float(max(sups)), "bounded")


def pattern_result_csv(result: PatternResult) -> str:
    """One row per horizon: T, breakpoints, piece values, cost, status."""
    n_int = len(result.flags)
    m = result.limit_values.shape[1]
    n_pieces = result.limit_values.shape[0]
    header = ["T"]
    header += [f"tau_{j + 1}" for j in range(n_int)]
    header += [f"u_{i + 1}_{k + 1}" for i in range(n_pieces) for k in range(m)]
    header += ["cost", "status"]
    lines = [",".join(header)]
    for e in result.entries:
        if e.ok:
            row = [f"{e.T:.12g}"]
            row += [f"{t:.12g}" for t in e.taus]
            row += [f"{v:.12g}" for v in np.asarray(e.values).ravel()]
            row += [f"{e.cost:.12g}", "ok"]
        else:
            row = [f"{e.T:.12g}"] + ["nan"] * (n_int + n_pieces * m) + ["nan", "failed"]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
