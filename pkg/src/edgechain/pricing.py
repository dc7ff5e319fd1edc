"""Stage-I pricing: the provider's profit-maximizing prices by backward induction.

Every price probe re-solves the miners' demand game, so the optimized
objective is profit at the induced equilibrium. Prices must leave every
miner a nonnegative equilibrium utility (individual rationality): miners are
voluntary customers, and without that constraint the linear-payment model
pushes every price to the cap.

The profit landscape is piecewise smooth with kinks where miners hit the
demand box or where rationality starts binding, so optimization is
derivative-free: a price grid, golden-section refinement of the best
bracket, and a bisection polish onto the rationality boundary, where the
optimum often sits. The discriminatory scheme runs coordinate ascent over
per-miner prices from a deterministic set of starting vectors. Probes are
independent and evaluated in a fixed order with explicit tie-breaking
(smallest price, lexicographic for price vectors), so results do not depend
on evaluation schedule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .market import (
    MarketParams,
    MinerProfile,
    PriceVector,
    provider_profit,
    valuations,
)
from .nash import (
    EquilibriumReport,
    NashConvergenceError,
    SolverSettings,
    batch_equilibrium_demands,
    solve_nash,
    verify_equilibrium,
)

__all__ = [
    "PricingSettings",
    "StackelbergSolution",
    "SchemeComparison",
    "PinnedCandidate",
    "InfeasibleMarketError",
    "optimize_uniform",
    "optimize_discriminatory",
    "pinned_extraction_candidate",
    "stackelberg_solve",
]

log = logging.getLogger(__name__)

# Smallest margin above unit cost that a probed price may have.
PRICE_FLOOR_OFFSET = 1e-6

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class InfeasibleMarketError(Exception):
    """No price in the admissible range keeps every miner's utility nonnegative."""


@dataclass(frozen=True)
class PricingSettings:
    """Knobs of the Stage-I optimizers.

    ``grid_points`` controls the uniform-price scan, ``dp_grid_points`` the
    per-coordinate scans of the discriminatory search (coarser by default:
    each grid point is a full re-solve of the demand game and golden
    refinement recovers the resolution).
    """

    grid_points: int = 2000
    refine: bool = True
    refine_tolerance: float = 1e-8
    multistarts: int = 8
    coordinate_sweeps: int = 50
    ir_tolerance: float = 1e-9
    dp_grid_points: int = 256

    def __post_init__(self) -> None:
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        if self.dp_grid_points < 2:
            raise ValueError("dp_grid_points must be >= 2")
        if self.refine_tolerance <= 0:
            raise ValueError("refine_tolerance must be > 0")
        if self.multistarts < 1:
            raise ValueError("multistarts must be >= 1")
        if self.coordinate_sweeps < 1:
            raise ValueError("coordinate_sweeps must be >= 1")
        if self.ir_tolerance < 0:
            raise ValueError("ir_tolerance must be >= 0")


@dataclass(frozen=True)
class StackelbergSolution:
    """Optimized prices with the equilibrium they induce."""

    scheme: str
    prices: PriceVector
    equilibrium: EquilibriumReport
    provider_profit: float
    feasible: bool
    candidates_evaluated: int


@dataclass(frozen=True)
class SchemeComparison:
    """Both pricing schemes on one instance, with their profit and demand gap."""

    uniform: StackelbergSolution
    discriminatory: StackelbergSolution
    profit_advantage: float
    demand_difference: float


class PinnedCandidate(NamedTuple):
    prices: PriceVector
    fully_extracting: bool


def _tie_tol(profit: float) -> float:
    return 1e-9 * max(1.0, abs(profit))


class _StageTwo:
    """Profit and rationality evaluator re-solving Stage II per price probe."""

    def __init__(self, profiles: Sequence[MinerProfile], params: MarketParams,
                 settings: PricingSettings):
        self.params = params
        self.settings = settings
        self.v = valuations(profiles, params)
        self.n = len(profiles)
        self.evaluations = 0

    def probe_rows(self, price_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Profit and worst miner utility for each row of prices."""
        rows = np.atleast_2d(price_rows)
        x = batch_equilibrium_demands(rows, self.v, self.params)
        self.evaluations += rows.shape[0]
        total = x.sum(axis=1) + self.params.outside_power
        utils = self.v * x / total[:, None] - rows * x
        profits = ((rows - self.params.provider_unit_cost) * x).sum(axis=1)
        return profits, utils.min(axis=1)

    def probe_one(self, prices: np.ndarray) -> tuple[float, float]:
        profits, min_utils = self.probe_rows(prices[None, :])
        return float(profits[0]), float(min_utils[0])

    def feasible(self, min_util: float) -> bool:
        return min_util >= -self.settings.ir_tolerance


def _golden_max(f: Callable[[float], float], a: float, b: float, tol: float) -> float:
    """Golden-section maximum of ``f`` on [a, b] to width ``tol``."""
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _rationality_boundary(min_util: Callable[[float], float],
                          p_ok: float, p_bad: float) -> Optional[float]:
    """Largest price in [p_ok, p_bad] keeping the worst utility nonnegative.

    Returns None unless ``p_ok`` is strictly rational and ``p_bad`` is not.
    """
    if not (min_util(p_ok) >= 0.0 and min_util(p_bad) < 0.0):
        return None
    for _ in range(200):
        mid = 0.5 * (p_ok + p_bad)
        if mid == p_ok or mid == p_bad:
            break
        if min_util(mid) >= 0.0:
            p_ok = mid
        else:
            p_bad = mid
    return p_ok


def _best_grid_index(profits: np.ndarray, feasible: np.ndarray) -> int:
    """Index of the best feasible profit; ties go to the lowest index (price)."""
    masked = np.where(feasible, profits, -np.inf)
    top = float(np.max(masked))
    winners = np.flatnonzero(masked >= top - _tie_tol(top))
    return int(winners[0])


def _scan_line(stage: _StageTwo, grid: np.ndarray,
               price_of: Callable[[np.ndarray], np.ndarray],
               settings: PricingSettings,
               skip_refine_below: Optional[float] = None) -> Optional[tuple[float, float]]:
    """Best price along one scan line: grid, golden refinement, boundary polish.

    ``price_of`` maps scalar prices on the line to full price vectors. Returns
    the winning (price, profit) among all evaluated candidates, or None when
    no probe on the line is feasible. When ``skip_refine_below`` is given,
    refinement is skipped unless the grid already beats that profit: in
    coordinate ascent most passes just confirm the incumbent, and refining a
    losing bracket cannot produce a move.
    """
    profits, min_utils = stage.probe_rows(price_of(grid))
    feasible = min_utils >= -settings.ir_tolerance
    if not np.any(feasible):
        return None
    i = _best_grid_index(profits, feasible)
    best_price, best_profit = float(grid[i]), float(profits[i])
    if not settings.refine or (
        skip_refine_below is not None
        and best_profit <= skip_refine_below + _tie_tol(skip_refine_below)
    ):
        return best_price, best_profit

    cache: dict[float, tuple[float, float]] = {}

    def probe(p: float) -> tuple[float, float]:
        if p not in cache:
            cache[p] = stage.probe_one(price_of(np.array([p]))[0])
        return cache[p]

    def profit_or_ninf(p: float) -> float:
        profit, min_u = probe(p)
        return profit if stage.feasible(min_u) else -np.inf

    candidates = [(best_price, best_profit)]
    golden: Optional[tuple[float, float]] = None
    a = float(grid[max(i - 1, 0)])
    b = float(grid[min(i + 1, len(grid) - 1)])
    if b > a:
        p_gold = _golden_max(profit_or_ninf, a, b, settings.refine_tolerance)
        gold_profit, gold_min_u = probe(p_gold)
        if stage.feasible(gold_min_u):
            golden = (p_gold, gold_profit)
    # The optimum frequently sits where rationality starts binding; locate
    # that boundary exactly between the best point and the next losing probe.
    above = np.flatnonzero(~feasible[i:])
    if above.size:
        j = i + int(above[0])
        boundary = _rationality_boundary(lambda p: probe(p)[1],
                                         float(grid[j - 1]), float(grid[j]))
        if boundary is not None:
            b_profit, b_min_u = probe(boundary)
            if stage.feasible(b_min_u):
                candidates.append((boundary, b_profit))
                # the polished point supersedes a golden estimate of the
                # same boundary optimum (same maximizer, lower precision)
                if golden is not None and abs(golden[0] - boundary) <= settings.refine_tolerance:
                    golden = None
    if golden is not None:
        candidates.append(golden)

    price, profit = candidates[0]
    for cand_price, cand_profit in candidates[1:]:
        if cand_profit > profit + _tie_tol(profit) or (
            cand_profit >= profit - _tie_tol(profit) and cand_price < price
        ):
            price, profit = cand_price, cand_profit
    return price, profit


def _finalize(scheme: str, prices: np.ndarray, profiles: Sequence[MinerProfile],
              params: MarketParams, settings: PricingSettings,
              evaluations: int) -> StackelbergSolution:
    report = solve_nash(prices, profiles, params)
    record = verify_equilibrium(report, prices, profiles, params)
    if not record.passed:
        raise RuntimeError(
            f"optimized {scheme} prices induced a non-equilibrium point "
            f"(improvement {record.worst_improvement:.3e})"
        )
    profit = provider_profit(report.demands, prices, params)
    feasible = bool(np.min(report.utilities) >= -settings.ir_tolerance)
    if not feasible:
        raise RuntimeError(f"optimized {scheme} prices violate miner rationality")
    return StackelbergSolution(
        scheme=scheme,
        prices=PriceVector(scheme, prices),
        equilibrium=report,
        provider_profit=profit,
        feasible=feasible,
        candidates_evaluated=evaluations,
    )


def optimize_uniform(
    profiles: Sequence[MinerProfile],
    params: MarketParams,
    settings: Optional[PricingSettings] = None,
) -> StackelbergSolution:
    """Best single price charged to every miner.

    Grid scan over (cost, cap], golden refinement around the best bracket,
    and a polish onto the rationality boundary; near-equal optima resolve to
    the smallest price. Raises :class:`InfeasibleMarketError` when no price
    keeps all miners on board.
    """
    settings = settings or PricingSettings()
    stage = _StageTwo(profiles, params, settings)
    lo = params.provider_unit_cost + PRICE_FLOOR_OFFSET
    if lo >= params.price_cap:
        raise InfeasibleMarketError("price cap leaves no margin above unit cost")
    grid = np.linspace(lo, params.price_cap, settings.grid_points)

    def price_of(scalars: np.ndarray) -> np.ndarray:
        return np.repeat(np.asarray(scalars, dtype=float)[:, None], stage.n, axis=1)

    best = _scan_line(stage, grid, price_of, settings)
    if best is None:
        raise InfeasibleMarketError(
            "no individually rational uniform price in the admissible range"
        )
    price, _ = best
    return _finalize("uniform", np.full(stage.n, price), profiles, params,
                     settings, stage.evaluations)


def pinned_extraction_candidate(
    profiles: Sequence[MinerProfile], params: MarketParams
) -> PinnedCandidate:
    """Closed-form price vector pinning every miner at the demand floor.

    At p_i = V_i / (N * demand_min) with no outside power, the all-floor
    point is an equilibrium and every miner's utility is exactly zero, so
    the provider extracts the full average valuation. Prices beyond the cap
    (or vanishing for zero-valuation miners) are clamped into range and the
    candidate is flagged as not fully extracting.
    """
    if params.outside_power != 0:
        raise ValueError("pinned extraction assumes zero outside hash power")
    n = len(profiles)
    if n < 2:
        raise ValueError("pinned extraction requires at least two miners")
    raw = valuations(profiles, params) / (n * params.demand_min)
    floor = params.provider_unit_cost + PRICE_FLOOR_OFFSET
    prices = np.clip(raw, floor, params.price_cap)
    fully_extracting = bool(np.all(raw == prices))
    return PinnedCandidate(PriceVector("discriminatory", prices), fully_extracting)


def _seed_vectors(stage: _StageTwo, params: MarketParams,
                  settings: PricingSettings,
                  uniform_price: Optional[float],
                  pinned: Optional[np.ndarray]) -> list[np.ndarray]:
    """Deterministic multistart seeds: uniform optimum, pinned extraction,
    scaled variants, and a geometric ladder of flat vectors."""
    lo = params.provider_unit_cost + PRICE_FLOOR_OFFSET
    hi = params.price_cap
    seeds: list[np.ndarray] = []
    if uniform_price is not None:
        seeds.append(np.full(stage.n, uniform_price))
    if pinned is not None:
        seeds.append(pinned)
        seeds.append(np.clip(pinned * 0.5, lo, hi))
        seeds.append(np.clip(pinned * 2.0, lo, hi))
    k = 1
    while len(seeds) < settings.multistarts and k <= settings.multistarts:
        frac = k / (settings.multistarts + 1)
        seeds.append(np.full(stage.n, lo * (hi / lo) ** frac))
        k += 1
    unique: list[np.ndarray] = []
    seen = set()
    for seed in seeds:
        key = tuple(np.round(seed, 9))
        if key not in seen:
            seen.add(key)
            unique.append(seed)
    return unique[: settings.multistarts]


def _coordinate_ascent(stage: _StageTwo, seed: np.ndarray, params: MarketParams,
                       settings: PricingSettings) -> Optional[tuple[np.ndarray, float]]:
    """Cyclic per-coordinate improvement of the discriminatory price vector.

    Each coordinate pass runs the full scan-line machinery with the other
    prices held fixed. Stops when a whole sweep brings no profit gain.
    Returns None when no rational price vector was ever reached.
    """
    lo = params.provider_unit_cost + PRICE_FLOOR_OFFSET
    prices = np.clip(np.asarray(seed, dtype=float), lo, params.price_cap).copy()
    profit, min_util = stage.probe_one(prices)
    have_feasible = stage.feasible(min_util)
    current = profit if have_feasible else -np.inf
    grid = np.linspace(lo, params.price_cap, settings.dp_grid_points)

    for _ in range(settings.coordinate_sweeps):
        improved = False
        for k in range(stage.n):
            def price_of(scalars: np.ndarray, k: int = k) -> np.ndarray:
                rows = np.repeat(prices[None, :], len(scalars), axis=0)
                rows[:, k] = scalars
                return rows

            found = _scan_line(
                stage, grid, price_of, settings,
                skip_refine_below=current if have_feasible else None,
            )
            if found is None:
                continue
            cand_price, cand_profit = found
            if cand_profit > current + _tie_tol(current if have_feasible else cand_profit):
                prices[k] = cand_price
                current = cand_profit
                have_feasible = True
                improved = True
            elif (
                have_feasible
                and cand_profit >= current - _tie_tol(current)
                and cand_price < prices[k]
            ):
                # equal-profit tie: prefer the smaller price, not an "improvement"
                prices[k] = cand_price
                current = cand_profit
        if not improved:
            break
    if not have_feasible:
        return None
    return prices, current


def optimize_discriminatory(
    profiles: Sequence[MinerProfile],
    params: MarketParams,
    settings: Optional[PricingSettings] = None,
) -> StackelbergSolution:
    """Best per-miner price vector via multistart coordinate ascent.

    Seeds always include the replicated uniform optimum (so the
    discriminatory profit can never fall below the uniform one) and the
    pinned-extraction candidate. Near-equal optima resolve lexicographically
    by miner index.
    """
    settings = settings or PricingSettings()
    stage = _StageTwo(profiles, params, settings)

    uniform_price: Optional[float] = None
    try:
        uniform = optimize_uniform(profiles, params, settings)
        uniform_price = float(uniform.prices.prices[0])
        stage.evaluations += uniform.candidates_evaluated
    except InfeasibleMarketError:
        pass
    pinned: Optional[np.ndarray] = None
    if params.outside_power == 0 and stage.n >= 2:
        pinned = np.asarray(pinned_extraction_candidate(profiles, params).prices.prices)

    best: Optional[tuple[np.ndarray, float]] = None
    for seed in _seed_vectors(stage, params, settings, uniform_price, pinned):
        try:
            result = _coordinate_ascent(stage, seed, params, settings)
        except NashConvergenceError as err:
            log.warning("abandoning start %s: %s", seed, err)
            continue
        if result is None:
            continue
        prices, profit = result
        if best is None:
            best = (prices, profit)
            continue
        tol = _tie_tol(best[1])
        if profit > best[1] + tol or (
            profit >= best[1] - tol and tuple(prices) < tuple(best[0])
        ):
            best = (prices, profit)
    if best is None:
        raise InfeasibleMarketError(
            "no individually rational discriminatory prices in the admissible range"
        )
    return _finalize("discriminatory", best[0], profiles, params, settings,
                     stage.evaluations)


def stackelberg_solve(
    profiles: Sequence[MinerProfile],
    params: MarketParams,
    settings: Optional[PricingSettings] = None,
) -> SchemeComparison:
    """Solve both pricing schemes and compare them.

    Discriminatory pricing can always replicate the uniform optimum, so its
    profit must come out at least as large; a violation is an internal error.
    """
    settings = settings or PricingSettings()
    uniform = optimize_uniform(profiles, params, settings)
    discriminatory = optimize_discriminatory(profiles, params, settings)
    gap = discriminatory.provider_profit - uniform.provider_profit
    if gap < -1e-9:
        raise RuntimeError(
            f"discriminatory profit {discriminatory.provider_profit!r} fell below "
            f"uniform profit {uniform.provider_profit!r}"
        )
    return SchemeComparison(
        uniform=uniform,
        discriminatory=discriminatory,
        profit_advantage=gap,
        demand_difference=(
            discriminatory.equilibrium.demands.total
            - uniform.equilibrium.demands.total
        ),
    )
