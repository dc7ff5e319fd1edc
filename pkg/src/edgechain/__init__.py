"""Edge-compute mining market: equilibrium solvers, pricing, and race simulation."""

__version__ = "0.1.0"

from .market import (
    DemandProfile,
    MarketParams,
    MinerProfile,
    PriceVector,
    miner_utility,
    provider_profit,
    sample_block_sizes,
    valuation,
    win_probability,
)
from .mining import (
    PowBudgetError,
    RaceConfig,
    RaceStats,
    estimate_win_prob,
    pow_solve,
    pow_verify,
    simulate_race,
)
from .nash import (
    EquilibriumReport,
    NashConvergenceError,
    NotAllInteriorError,
    SolverSettings,
    best_response,
    solve_nash,
    solve_nash_closed_form,
    solve_nash_iterative,
    verify_equilibrium,
)
from .pricing import (
    InfeasibleMarketError,
    PricingSettings,
    SchemeComparison,
    StackelbergSolution,
    optimize_discriminatory,
    optimize_uniform,
    pinned_extraction_candidate,
    stackelberg_solve,
)

__all__ = [
    "__version__",
    "DemandProfile",
    "MarketParams",
    "MinerProfile",
    "PriceVector",
    "miner_utility",
    "provider_profit",
    "sample_block_sizes",
    "valuation",
    "win_probability",
    "PowBudgetError",
    "RaceConfig",
    "RaceStats",
    "estimate_win_prob",
    "pow_solve",
    "pow_verify",
    "simulate_race",
    "EquilibriumReport",
    "NashConvergenceError",
    "NotAllInteriorError",
    "SolverSettings",
    "best_response",
    "solve_nash",
    "solve_nash_closed_form",
    "solve_nash_iterative",
    "verify_equilibrium",
    "InfeasibleMarketError",
    "PricingSettings",
    "SchemeComparison",
    "StackelbergSolution",
    "optimize_discriminatory",
    "optimize_uniform",
    "pinned_extraction_candidate",
    "stackelberg_solve",
]
