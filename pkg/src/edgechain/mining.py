"""Monte Carlo mining races and a minimal proof-of-work puzzle.

Validates the analytic winner-take-all probabilities: memoryless hashing
makes each miner's time to a solution exponential with rate proportional to
its compute, so the winner of a race is a categorical draw with probability
proportional to demand. The hash-race mode replays the same race with real
SHA-256 puzzles, counting actual attempts until the difficulty target is
met; solution times are attempts divided by the miner's compute rate.

Digest contract: SHA-256 over header bytes followed by the nonce encoded as
8 bytes big-endian; a solution has at least ``difficulty_bits`` leading zero
bits. Raising the difficulty stretches the race's time scale.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .market import MarketParams, win_probability

__all__ = [
    "RaceConfig",
    "RaceStats",
    "PowBudgetError",
    "simulate_race",
    "estimate_win_prob",
    "pow_solve",
    "pow_verify",
]

MODES = ("analytic_race", "hash_race")

# Default attempt budget per puzzle: overrunning a geometric race with mean
# 2^bits by this factor has probability ~exp(-4096).
_BUDGET_FACTOR = 4096


class PowBudgetError(RuntimeError):
    """No nonce satisfying the difficulty target within the attempt budget."""


@dataclass(frozen=True)
class RaceConfig:
    """One mining-race experiment."""

    demands: tuple[float, ...]
    outside_power: float = 0.0
    trials: int = 10_000
    seed: int = 0
    mode: str = "analytic_race"
    difficulty_bits: int = 8

    def __post_init__(self) -> None:
        demands = tuple(float(d) for d in self.demands)
        object.__setattr__(self, "demands", demands)
        if not demands or not any(d > 0 for d in demands):
            raise ValueError("at least one demand must be positive")
        if any(d < 0 for d in demands):
            raise ValueError("demands must be nonnegative")
        if self.outside_power < 0:
            raise ValueError("outside_power must be nonnegative")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 1 <= self.difficulty_bits <= 64:
            raise ValueError("difficulty_bits must be in [1, 64]")


@dataclass(frozen=True)
class RaceStats:
    """Race outcome summary; all sequences are per miner."""

    win_counts: tuple[int, ...]
    outside_wins: int
    empirical_prob: tuple[float, ...]
    analytic_prob: tuple[float, ...]
    ci95: tuple[float, ...]
    trials: int
    seed: int


def _stats_from_counts(counts: np.ndarray, outside_wins: int,
                       config: RaceConfig) -> RaceStats:
    params = MarketParams(outside_power=config.outside_power)
    analytic = win_probability(np.array(config.demands), params).probs
    empirical = counts / config.trials
    ci95 = 1.96 * np.sqrt(empirical * (1.0 - empirical) / config.trials)
    return RaceStats(
        win_counts=tuple(int(c) for c in counts),
        outside_wins=int(outside_wins),
        empirical_prob=tuple(float(p) for p in empirical),
        analytic_prob=tuple(float(p) for p in analytic),
        ci95=tuple(float(c) for c in ci95),
        trials=config.trials,
        seed=config.seed,
    )


def _race_header(seed: int, trial: int, contestant: int) -> bytes:
    return (
        seed.to_bytes(8, "big", signed=False)
        + trial.to_bytes(8, "big", signed=False)
        + contestant.to_bytes(4, "big", signed=False)
    )


def simulate_race(config: RaceConfig) -> RaceStats:
    """Run the mining race and tally wins per miner (and outside power)."""
    n = len(config.demands)
    rates = np.array(config.demands + (config.outside_power,))

    if config.mode == "analytic_race":
        rng = np.random.default_rng(config.seed)
        winners = rng.choice(n + 1, size=config.trials, p=rates / rates.sum())
        counts = np.bincount(winners, minlength=n + 1)
        return _stats_from_counts(counts[:n], counts[n], config)

    budget = (1 << config.difficulty_bits) * _BUDGET_FACTOR
    counts = np.zeros(n + 1, dtype=int)
    contestants = [i for i in range(n + 1) if rates[i] > 0]
    for trial in range(config.trials):
        best_time = np.inf
        winner = -1
        for i in contestants:
            nonce, _ = pow_solve(_race_header(config.seed, trial, i),
                                 config.difficulty_bits, 0, budget)
            solve_time = (nonce + 1) / rates[i]
            if solve_time < best_time:
                best_time = solve_time
                winner = i
        counts[winner] += 1
    return _stats_from_counts(counts[:n], counts[n], config)


def estimate_win_prob(demands, outside_power: float = 0.0,
                      trials: int = 10_000, seed: int = 0) -> RaceStats:
    """Empirical win probabilities with confidence intervals (analytic race)."""
    config = RaceConfig(demands=tuple(demands), outside_power=outside_power,
                        trials=trials, seed=seed, mode="analytic_race")
    return simulate_race(config)


def _meets_target(digest: bytes, difficulty_bits: int) -> bool:
    return int.from_bytes(digest[:8], "big") >> (64 - difficulty_bits) == 0


def pow_solve(header: bytes, difficulty_bits: int, start_nonce: int = 0,
              max_attempts: int = 1 << 30) -> tuple[int, bytes]:
    """Smallest nonce at or above ``start_nonce`` whose digest meets the target.

    Returns the nonce and its digest. Raises :class:`PowBudgetError` when no
    solution exists within ``max_attempts`` attempts.
    """
    if not 1 <= difficulty_bits <= 64:
        raise ValueError("difficulty_bits must be in [1, 64]")
    if start_nonce < 0:
        raise ValueError("start_nonce must be >= 0")
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    for nonce in range(start_nonce, start_nonce + max_attempts):
        digest = hashlib.sha256(header + nonce.to_bytes(8, "big")).digest()
        if _meets_target(digest, difficulty_bits):
            return nonce, digest
    raise PowBudgetError(
        f"no solution within {max_attempts} attempts from nonce {start_nonce}"
    )


def pow_verify(header: bytes, nonce: int, difficulty_bits: int) -> bool:
    """Recompute one digest and check the leading-zero-bit condition."""
    if not 1 <= difficulty_bits <= 64:
        raise ValueError("difficulty_bits must be in [1, 64]")
    if nonce < 0:
        return False
    digest = hashlib.sha256(header + nonce.to_bytes(8, "big")).digest()
    return _meets_target(digest, difficulty_bits)
