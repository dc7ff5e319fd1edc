"""Economic primitives of the edge-compute mining market.

Miners buy compute from an edge provider and race to mine the next block.
A miner's chance of winning the race equals its share of the total compute
engaged in the race (winner-take-all contest), so purchased demand plays the
role of hash power. The prize is a fixed reward plus a per-transaction
variable reward, optionally discounted for consensus delay on large blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

__all__ = [
    "MinerProfile",
    "MarketParams",
    "PriceVector",
    "DemandProfile",
    "WinProbabilities",
    "valuation",
    "valuations",
    "win_probability",
    "miner_utility",
    "all_utilities",
    "provider_profit",
    "sample_block_sizes",
    "profiles_from_block_sizes",
]

SCHEMES = ("uniform", "discriminatory")

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class MinerProfile:
    """One miner: an index and the size (transaction count) of its blocks."""

    id: int
    block_size: float

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"id must be >= 0, got {self.id}")
        if not self.block_size > 0:
            raise ValueError(f"block_size must be > 0, got {self.block_size}")


@dataclass(frozen=True)
class MarketParams:
    """Global economic constants of the compute market.

    Attributes:
        fixed_reward: tokens paid for any mined block (R).
        variable_reward_rate: tokens per transaction in the block (r).
        provider_unit_cost: provider's cost per compute unit served (c).
        demand_min: smallest purchasable compute quantity; participation floor.
        demand_max: largest purchasable compute quantity per miner.
        price_cap: largest admissible unit price; must exceed the unit cost.
        outside_power: hash power competing from outside the priced market (Q).
        orphan_rate: per-transaction consensus-delay discount rate on the prize.
        block_size_mean: mean of the block-size distribution (transactions).
        block_size_var: variance of the block-size distribution.
    """

    fixed_reward: float = 10_000.0
    variable_reward_rate: float = 20.0
    provider_unit_cost: float = 0.0
    demand_min: float = 1.0
    demand_max: float = 1_000.0
    price_cap: float = 10_000.0
    outside_power: float = 0.0
    orphan_rate: float = 0.0
    block_size_mean: float = 200.0
    block_size_var: float = 5.0

    def __post_init__(self) -> None:
        checks = [
            ("fixed_reward", self.fixed_reward >= 0),
            ("variable_reward_rate", self.variable_reward_rate >= 0),
            ("provider_unit_cost", self.provider_unit_cost >= 0),
            ("demand_min", self.demand_min > 0),
            ("demand_max", self.demand_max >= self.demand_min),
            ("price_cap", self.price_cap > self.provider_unit_cost),
            ("outside_power", self.outside_power >= 0),
            ("orphan_rate", self.orphan_rate >= 0),
            ("block_size_mean", self.block_size_mean > 0),
            ("block_size_var", self.block_size_var >= 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid {name}: {getattr(self, name)!r}")


@dataclass(frozen=True)
class PriceVector:
    """Per-miner unit prices under a named pricing scheme."""

    scheme: str
    prices: np.ndarray

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        prices = np.asarray(self.prices, dtype=float)
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)
        if prices.ndim != 1 or prices.size == 0:
            raise ValueError("prices must be a nonempty 1-d vector")
        if not np.all(prices > 0):
            raise ValueError("all prices must be > 0")
        if self.scheme == "uniform" and not np.all(prices == prices[0]):
            raise ValueError("uniform scheme requires identical prices")


@dataclass(frozen=True)
class DemandProfile:
    """Per-miner compute demands and their total."""

    demands: np.ndarray
    total: float = 0.0

    def __post_init__(self) -> None:
        demands = np.asarray(self.demands, dtype=float)
        demands.setflags(write=False)
        object.__setattr__(self, "demands", demands)
        if demands.ndim != 1 or demands.size == 0:
            raise ValueError("demands must be a nonempty 1-d vector")
        total = math.fsum(demands.tolist())
        if self.total:
            if abs(self.total - total) > 1e-12 * max(1.0, abs(total)):
                raise ValueError("total inconsistent with the demand sum")
        else:
            object.__setattr__(self, "total", total)


class WinProbabilities(NamedTuple):
    """Per-miner winning probabilities; ``no_winner`` marks a dead race."""

    probs: np.ndarray
    no_winner: bool


def valuation(profile: MinerProfile, params: MarketParams) -> float:
    """Expected prize of a mined block: (R + r*t) discounted by exp(-lambda*t)."""
    base = params.fixed_reward + params.variable_reward_rate * profile.block_size
    return base * math.exp(-params.orphan_rate * profile.block_size)


def valuations(profiles: Sequence[MinerProfile], params: MarketParams) -> np.ndarray:
    """Vector of block valuations for a roster of miners."""
    t = np.array([p.block_size for p in profiles], dtype=float)
    return (params.fixed_reward + params.variable_reward_rate * t) * np.exp(
        -params.orphan_rate * t
    )


def _demand_array(demands: Union[DemandProfile, ArrayLike]) -> np.ndarray:
    if isinstance(demands, DemandProfile):
        return demands.demands
    return np.asarray(demands, dtype=float)


def win_probability(
    demands: Union[DemandProfile, ArrayLike], params: MarketParams
) -> WinProbabilities:
    """Winning probability of each miner: own demand over total engaged power.

    The total includes any hash power outside the priced market. A race with
    zero total power cannot be won; that case returns zero probabilities and
    the ``no_winner`` flag.
    """
    x = _demand_array(demands)
    if np.any(x < 0):
        raise ValueError("demands must be nonnegative")
    total = float(np.sum(x)) + params.outside_power
    if total <= 0:
        return WinProbabilities(np.zeros_like(x), True)
    return WinProbabilities(x / total, False)


def miner_utility(
    i: int,
    demands: Union[DemandProfile, ArrayLike],
    prices: ArrayLike,
    profiles: Sequence[MinerProfile],
    params: MarketParams,
) -> float:
    """Expected utility of miner ``i``: prize times win probability, minus payment."""
    return float(all_utilities(demands, prices, profiles, params)[i])


def all_utilities(
    demands: Union[DemandProfile, ArrayLike],
    prices: ArrayLike,
    profiles: Sequence[MinerProfile],
    params: MarketParams,
) -> np.ndarray:
    """Expected utilities of every miner at the given demands and prices."""
    x = _demand_array(demands)
    p = np.asarray(prices, dtype=float)
    v = valuations(profiles, params)
    probs = win_probability(x, params).probs
    return v * probs - p * x


def provider_profit(
    demands: Union[DemandProfile, ArrayLike],
    prices: ArrayLike,
    params: MarketParams,
) -> float:
    """Provider profit: unit margin times quantity, summed over miners."""
    x = _demand_array(demands)
    p = np.asarray(prices, dtype=float)
    return math.fsum(((p - params.provider_unit_cost) * x).tolist())


def sample_block_sizes(n: int, params: MarketParams, seed: int) -> np.ndarray:
    """Draw ``n`` block sizes from the market's normal law, truncated to t > 0.

    Sampling is by rejection, so the draw is deterministic for a given seed
    and, with zero variance, degenerates to the mean exactly.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    sigma = math.sqrt(params.block_size_var)
    if sigma == 0.0:
        return np.full(n, params.block_size_mean)
    rng = np.random.default_rng(seed)
    out = np.empty(0)
    while out.size < n:
        draw = rng.normal(params.block_size_mean, sigma, size=2 * (n - out.size))
        out = np.concatenate([out, draw[draw > 0]])
    return out[:n]


def profiles_from_block_sizes(sizes: ArrayLike) -> tuple[MinerProfile, ...]:
    """Build a contiguously indexed miner roster from block sizes."""
    return tuple(MinerProfile(i, float(t)) for i, t in enumerate(np.asarray(sizes)))
