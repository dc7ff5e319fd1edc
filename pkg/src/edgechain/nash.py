"""Nash equilibrium of the miners' demand sub-game at fixed prices.

Each miner chooses a compute demand in a box to maximize prize-share minus
payment, holding the others fixed. Three solution paths are provided:

* ``solve_nash_closed_form`` — the all-interior contest solution (no outside
  power), which exists only when no box constraint binds;
* ``solve_nash_iterative`` — damped simultaneous best-response iteration,
  certified a posteriori by its fixed-point residual;
* ``solve_nash`` — the production path: a monotone fixed point in the
  aggregate contest size, exact for any binding pattern and vectorizable
  across many price vectors at once (``batch_equilibrium_demands``).

All paths report the same KKT residual, max_i |x_i - best_response_i|.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .market import (
    DemandProfile,
    MarketParams,
    MinerProfile,
    all_utilities,
    valuations,
    win_probability,
)

__all__ = [
    "SolverSettings",
    "EquilibriumReport",
    "VerificationRecord",
    "NotAllInteriorError",
    "NashConvergenceError",
    "best_response",
    "solve_nash_closed_form",
    "solve_nash_iterative",
    "solve_nash",
    "batch_equilibrium_demands",
    "verify_equilibrium",
]

# Bisection steps for the aggregate fixed point. The search interval is at
# most N * demand_max wide; ~110 halvings drive the bracket below one ulp.
_BISECT_STEPS = 110

# Window length for stall detection: if the residual has not dropped by at
# least 1% across a whole window, the iteration is cycling (simultaneous best
# response overshoots when many miners move at once) and damping is halved.
_STALL_WINDOW = 100


class NotAllInteriorError(Exception):
    """The closed-form contest solution has a demand outside the open box."""


class NashConvergenceError(RuntimeError):
    """Best-response iteration exhausted its budget before converging."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverSettings:
    """Knobs of the iterative solver and of equilibrium verification."""

    damping: float = 0.5
    tolerance: float = 1e-10
    max_iterations: int = 100_000
    deviation_grid_points: int = 1000

    def __post_init__(self) -> None:
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must be in (0, 1], got {self.damping}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.deviation_grid_points < 2:
            raise ValueError("deviation_grid_points must be >= 2")


@dataclass(frozen=True)
class EquilibriumReport:
    """A candidate equilibrium with its diagnostics."""

    demands: DemandProfile
    utilities: np.ndarray
    win_probs: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool
    binding: tuple[str, ...]


@dataclass(frozen=True)
class VerificationRecord:
    """Outcome of the no-profitable-deviation grid scan."""

    passed: bool
    kkt_residual: float
    worst_improvement: float
    worst_miner: int


def best_response(
    valuation: float, others_demand: float, price: float, params: MarketParams
) -> float:
    """Demand maximizing one miner's utility against a fixed opposing total.

    ``others_demand`` excludes outside hash power, which is added here. With
    no opposing power at all, any positive demand wins surely, so the floor
    demand is optimal.
    """
    if price <= 0:
        raise ValueError(f"price must be > 0, got {price}")
    s = others_demand + params.outside_power
    if s <= 0:
        return params.demand_min
    interior = np.sqrt(max(valuation, 0.0) * s / price) - s
    return float(min(max(interior, params.demand_min), params.demand_max))


# Extended precision for residual measurement and final-solution polish: the
# fixed-point residual of an exact equilibrium measures as ~ulp(total demand)
# in float64, which can exceed the certification tolerance on large markets.
_LONG = np.longdouble


def _best_responses(
    x: np.ndarray, v: np.ndarray, p: np.ndarray, params: MarketParams
) -> np.ndarray:
    s = np.sum(x) - x + params.outside_power
    with np.errstate(invalid="ignore"):
        interior = np.sqrt(np.maximum(v, 0.0) * s / p) - s
    br = np.clip(interior, params.demand_min, params.demand_max)
    return np.where(s > 0, br, params.demand_min)


def _kkt_residual(
    x: np.ndarray, v: np.ndarray, p: np.ndarray, params: MarketParams
) -> float:
    xl = x.astype(_LONG)
    s = np.sum(xl) - xl + _LONG(params.outside_power)
    with np.errstate(invalid="ignore"):
        interior = np.sqrt(np.maximum(v.astype(_LONG), 0.0) * s / p.astype(_LONG)) - s
    br = np.clip(interior, params.demand_min, params.demand_max)
    br = np.where(s > 0, br, _LONG(params.demand_min))
    return float(np.max(np.abs(xl - br)))


def _binding_pattern(x: np.ndarray, params: MarketParams) -> tuple[str, ...]:
    atol_min = 1e-9 * max(1.0, params.demand_min)
    atol_max = 1e-9 * max(1.0, params.demand_max)
    out = []
    for xi in x:
        if xi - params.demand_min <= atol_min:
            out.append("at_min")
        elif params.demand_max - xi <= atol_max:
            out.append("at_max")
        else:
            out.append("interior")
    return tuple(out)


def _build_report(
    x: np.ndarray,
    prices: np.ndarray,
    profiles: Sequence[MinerProfile],
    params: MarketParams,
    iterations: int,
    converged: bool,
) -> EquilibriumReport:
    v = valuations(profiles, params)
    demands = DemandProfile(x)
    return EquilibriumReport(
        demands=demands,
        utilities=all_utilities(demands, prices, profiles, params),
        win_probs=win_probability(demands, params).probs,
        kkt_residual=_kkt_residual(x, v, prices, params),
        iterations=iterations,
        converged=converged,
        binding=_binding_pattern(x, params),
    )


def solve_nash_closed_form(
    prices: Sequence[float],
    profiles: Sequence[MinerProfile],
    params: MarketParams,
) -> EquilibriumReport:
    """All-interior contest equilibrium: X = (N-1) / sum_j(p_j / V_j).

    Only valid without outside hash power and with at least two miners.
    Raises :class:`NotAllInteriorError` when any demand would touch the box,
    signalling callers to fall back to a numeric path.
    """
    p = np.asarray(prices, dtype=float)
    n = len(profiles)
    if params.outside_power != 0:
        raise ValueError("closed form requires zero outside hash power")
    if n < 2:
        raise ValueError("closed form requires at least two miners")
    if p.shape != (n,) or np.any(p <= 0):
        raise ValueError("prices must be positive, one per miner")
    v = valuations(profiles, params)
    if np.any(v <= 0):
        raise NotAllInteriorError("zero-valuation miner cannot be interior")
    total = (n - 1) / float(np.sum(p / v))
    x = total * (1.0 - p * total / v)
    if not np.all((x > params.demand_min) & (x < params.demand_max)):
        raise NotAllInteriorError("a demand falls outside the open box")
    return _build_report(x, p, profiles, params, iterations=0, converged=True)


def solve_nash_iterative(
    prices: Sequence[float],
    profiles: Sequence[MinerProfile],
    params: MarketParams,
    settings: Optional[SolverSettings] = None,
    start: Optional[Sequence[float]] = None,
) -> EquilibriumReport:
    """Damped simultaneous best-response iteration projected onto the box.

    Starts from the all-floor point unless ``start`` is given. The damping
    factor is halved whenever the residual stalls: with many miners the
    undamped simultaneous update overshoots the aggregate and cycles, and no
    single factor suits every instance. Convergence is never assumed; the
    returned report carries the measured fixed-point residual, and exhausting
    the budget raises :class:`NashConvergenceError`.
    """
    settings = settings or SolverSettings()
    p = np.asarray(prices, dtype=float)
    n = len(profiles)
    if p.shape != (n,) or np.any(p <= 0):
        raise ValueError("prices must be positive, one per miner")
    v = valuations(profiles, params)
    if start is None:
        x = np.full(n, params.demand_min)
    else:
        x = np.clip(np.asarray(start, dtype=float), params.demand_min, params.demand_max)

    theta = settings.damping
    window_anchor = np.inf
    residual = np.inf
    for iteration in range(1, settings.max_iterations + 1):
        br = _best_responses(x, v, p, params)
        residual = float(np.max(np.abs(x - br)))
        if residual <= settings.tolerance:
            return _build_report(x, p, profiles, params, iteration, converged=True)
        if iteration % _STALL_WINDOW == 0:
            if residual > 0.99 * window_anchor and theta > 1e-6:
                theta *= 0.5
            window_anchor = residual
        x = (1.0 - theta) * x + theta * br
    raise NashConvergenceError(
        f"no equilibrium within {settings.max_iterations} iterations "
        f"(residual {residual:.3e})",
        residual=residual,
        iterations=settings.max_iterations,
    )


def _totals_bisect_python(coeff, lo0, hi0, outside, xmin, xmax):
    """Bisection for the aggregate contest size, one row of p/V slopes each.

    Plain nested loops so the same source can be JIT-compiled; the numpy
    fallback below is the vectorized equivalent.
    """
    rows, n = coeff.shape
    out = np.empty(rows)
    for g in range(rows):
        # Gap at the lower end is nonnegative by construction; zero means
        # every miner is pinned at the floor and the bracket degenerates.
        s = 0.0
        for i in range(n):
            raw = lo0 - coeff[g, i] * lo0 * lo0
            if raw < xmin:
                raw = xmin
            elif raw > xmax:
                raw = xmax
            s += raw
        if s + outside - lo0 <= 0.0:
            out[g] = lo0
            continue
        lo = lo0
        hi = hi0
        for _ in range(_BISECT_STEPS):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            s = 0.0
            for i in range(n):
                raw = mid - coeff[g, i] * mid * mid
                if raw < xmin:
                    raw = xmin
                elif raw > xmax:
                    raw = xmax
                s += raw
            if s + outside - mid > 0.0:
                lo = mid
            else:
                hi = mid
        out[g] = hi
    return out


def _totals_bisect_numpy(coeff, lo0, hi0, outside, xmin, xmax):
    rows = coeff.shape[0]
    lo = np.full(rows, lo0)
    hi = np.full(rows, hi0)

    def gap(total):
        raw = total[:, None] - coeff * (total * total)[:, None]
        return np.clip(raw, xmin, xmax).sum(axis=1) + outside - total

    pinned_low = gap(lo) <= 0.0
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        up = gap(mid) > 0.0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return np.where(pinned_low, lo0, hi)


try:  # pragma: no cover - exercised through batch_equilibrium_demands
    from numba import njit

    _totals_bisect = njit(cache=True)(_totals_bisect_python)
except ImportError:  # pragma: no cover
    _totals_bisect = _totals_bisect_numpy


def batch_equilibrium_demands(
    price_rows: np.ndarray, miner_valuations: np.ndarray, params: MarketParams
) -> np.ndarray:
    """Equilibrium demands for every row of a price matrix, vectorized.

    For a candidate aggregate contest size T (total demand plus outside
    power), the KKT conditions pin each miner to
    ``clip(T - p_i T^2 / V_i, demand_min, demand_max)``; the equilibrium is
    the unique T where these demands plus outside power reproduce T. The
    aggregate share is strictly decreasing in T, so bisection on the sign of
    the consistency gap converges to it from any bracket.
    """
    rows = np.atleast_2d(np.asarray(price_rows, dtype=float))
    v = np.asarray(miner_valuations, dtype=float)
    n = rows.shape[1]
    # p/V, with zero-valuation miners forced to the floor via an infinite slope
    with np.errstate(divide="ignore"):
        coeff = np.where(v > 0, rows / np.where(v > 0, v, 1.0), np.inf)
    coeff = np.ascontiguousarray(coeff)
    q = params.outside_power
    total = _totals_bisect(coeff, n * params.demand_min + q,
                           n * params.demand_max + q, q,
                           params.demand_min, params.demand_max)
    raw = total[:, None] - coeff * (total * total)[:, None]
    return np.clip(raw, params.demand_min, params.demand_max)


def _demands_extended(p: np.ndarray, v: np.ndarray, params: MarketParams) -> np.ndarray:
    """Aggregate fixed point re-solved in extended precision.

    The bisection runs on long doubles so the demands, once rounded back to
    float64, carry per-miner rounding error rather than error proportional
    to the total market size. Used for final solutions only; grid probes
    stay on the fast float64 kernel.
    """
    n = p.shape[0]
    vl = v.astype(_LONG)
    with np.errstate(divide="ignore"):
        coeff = np.where(v > 0, p.astype(_LONG) / np.where(vl > 0, vl, 1.0), np.inf)
    q = _LONG(params.outside_power)
    xmin = _LONG(params.demand_min)
    xmax = _LONG(params.demand_max)

    def clamped(total):
        return np.clip(total - coeff * total * total, xmin, xmax)

    lo = n * xmin + q
    hi = n * xmax + q
    if np.sum(clamped(lo)) + q - lo <= 0:
        total = lo
    else:
        for _ in range(140):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if np.sum(clamped(mid)) + q - mid > 0:
                lo = mid
            else:
                hi = mid
        total = hi
    return np.asarray(clamped(total), dtype=float)


def solve_nash(
    prices: Sequence[float],
    profiles: Sequence[MinerProfile],
    params: MarketParams,
    settings: Optional[SolverSettings] = None,
) -> EquilibriumReport:
    """Production Stage-II solver via the aggregate fixed point.

    Handles every binding pattern, any miner count, and outside hash power;
    the result is certified by its KKT residual against ``tolerance``.
    """
    settings = settings or SolverSettings()
    p = np.asarray(prices, dtype=float)
    n = len(profiles)
    if p.shape != (n,) or np.any(p <= 0):
        raise ValueError("prices must be positive, one per miner")
    v = valuations(profiles, params)
    x = _demands_extended(p, v, params)
    report = _build_report(x, p, profiles, params, iterations=_BISECT_STEPS,
                           converged=True)
    if report.kkt_residual > settings.tolerance:
        raise NashConvergenceError(
            f"aggregate fixed point left residual {report.kkt_residual:.3e} "
            f"above tolerance {settings.tolerance:.3e}",
            residual=report.kkt_residual,
            iterations=_BISECT_STEPS,
        )
    return report


def verify_equilibrium(
    report: EquilibriumReport,
    prices: Sequence[float],
    profiles: Sequence[MinerProfile],
    params: MarketParams,
    settings: Optional[SolverSettings] = None,
) -> VerificationRecord:
    """Certify a candidate by scanning unilateral deviations on a grid.

    Recomputes the fixed-point residual, then checks for every miner that no
    deviation over the demand box improves its utility by more than
    1e-6 times its valuation. Failure is reported as data, not raised.
    """
    settings = settings or SolverSettings()
    p = np.asarray(prices, dtype=float)
    v = valuations(profiles, params)
    x = report.demands.demands
    residual = _kkt_residual(x, v, p, params)

    grid = np.linspace(params.demand_min, params.demand_max,
                       settings.deviation_grid_points)
    current = all_utilities(x, p, profiles, params)
    others = np.sum(x) - x + params.outside_power
    worst_improvement = -np.inf
    worst_miner = -1
    passed = True
    for i in range(len(profiles)):
        contest = grid + others[i]
        with np.errstate(invalid="ignore", divide="ignore"):
            share = np.where(contest > 0, grid / np.where(contest > 0, contest, 1.0), 0.0)
        deviation_utility = v[i] * share - p[i] * grid
        improvement = float(np.max(deviation_utility) - current[i])
        if improvement > worst_improvement:
            worst_improvement = improvement
            worst_miner = i
        if improvement > 1e-6 * v[i]:
            passed = False
    return VerificationRecord(
        passed=passed,
        kkt_residual=residual,
        worst_improvement=worst_improvement,
        worst_miner=worst_miner,
    )
