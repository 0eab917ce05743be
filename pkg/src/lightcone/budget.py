"""Memory budget shared by every builder; ``LIGHTCONE_BUDGET_MB`` overrides the default."""

from __future__ import annotations

import os

DEFAULT_BUDGET_MB = 2048.0


class BudgetError(MemoryError):
    pass


def budget_mb() -> float:
    raw = os.environ.get("LIGHTCONE_BUDGET_MB")
    if raw is None or raw.strip() == "":
        return DEFAULT_BUDGET_MB
    try:
        val = float(raw)
    except ValueError:
        raise BudgetError(f"LIGHTCONE_BUDGET_MB must be a number, got {raw!r}") from None
    if val <= 0:
        raise BudgetError(f"LIGHTCONE_BUDGET_MB must be positive, got {val}")
    return val


def check_budget(n_bytes: float, what: str) -> None:
    limit = budget_mb() * 2**20
    if n_bytes > limit:
        raise BudgetError(f"{what} needs about {n_bytes / 2**20:.1f} MB, budget is {limit / 2**20:.0f} MB")
