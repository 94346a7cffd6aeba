"""Server-side aggregation rules: majority vote, credit-weighted vote, error feedback."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .vectors import SIGN_DTYPE


class AggregationConfigError(ValueError):
    """Invalid server configuration, e.g. an even voter count under error feedback."""


def stack_votes(votes, allow_abstain: bool = False) -> np.ndarray:
    """Stack votes into an ``(N, d)`` integer matrix after validating entries."""
    if len(votes) == 0:
        raise ValueError("empty vote set")
    V = votes if isinstance(votes, np.ndarray) else np.stack([np.asarray(v) for v in votes])
    if V.ndim != 2:
        raise ValueError("votes must be equal-length 1-D sign vectors")
    allowed = (V == 1) | (V == -1)
    if allow_abstain:
        allowed |= V == 0
    if not allowed.all():
        raise ValueError("vote entries must be -1 or +1" + (" (or 0 to abstain)" if allow_abstain else ""))
    return V.astype(np.int64)


def _sign_of_sum(x) -> np.ndarray:
    return np.where(x >= 0, 1, -1).astype(SIGN_DTYPE)


def majority_vote(votes, allow_abstain: bool = False) -> np.ndarray:
    """Entrywise sign of the vote sum; a zero sum resolves to +1.

    With ``allow_abstain`` a 0 entry means the worker sent nothing for that
    coordinate (top-k skip mode).
    """
    V = stack_votes(votes, allow_abstain)
    return _sign_of_sum(V.sum(axis=0))


@dataclass(frozen=True)
class CreditLedger:
    """Raw per-worker credits; clamping to zero happens only at vote time."""

    credits: np.ndarray

    @classmethod
    def initial(cls, num_workers: int) -> CreditLedger:
        return cls(np.ones(num_workers))


def weighted_vote(votes, ledger: CreditLedger, allow_abstain: bool = False) -> np.ndarray:
    V = stack_votes(votes, allow_abstain)
    r = np.asarray(ledger.credits, dtype=np.float64)
    if r.shape != (V.shape[0],):
        raise ValueError(f"{V.shape[0]} votes but {r.shape[0]} credits")
    # The 1/N prefactor of the weighted sum cannot change its sign, so it is omitted.
    return _sign_of_sum(np.maximum(r, 0.0) @ V)


def update_credits(ledger: CreditLedger, votes, aggregate, allow_abstain: bool = False) -> CreditLedger:
    """``r_m += (#matches - #mismatches) / d`` against this round's aggregate."""
    V = stack_votes(votes, allow_abstain)
    agg = np.asarray(aggregate)
    d = V.shape[1]
    matches = (V == agg).sum(axis=1)
    mismatches = ((V != agg) & (V != 0)).sum(axis=1)
    return CreditLedger(np.asarray(ledger.credits, dtype=np.float64) + (matches - mismatches) / d)


@dataclass(frozen=True)
class ResidualState:
    """Server residual held as ``s = M * e`` in exact integers, ``M`` = voter count."""

    scaled_residual: np.ndarray
    divisor: int
    rounds: int = field(default=0)

    @classmethod
    def initial(cls, d: int, divisor: int) -> ResidualState:
        if divisor < 1 or divisor % 2 == 0:
            raise AggregationConfigError(
                f"error feedback needs an odd total voter count, got {divisor}")
        return cls(np.zeros(d, dtype=np.int64), divisor)

    @property
    def residual(self) -> np.ndarray:
        return self.scaled_residual / self.divisor


def ef_aggregate(state: ResidualState, votes):
    """One error-feedback step with server compressor ``x -> sign(x) / M``.

    Returns ``(broadcast, scale, new_state)``; workers step by
    ``-lr * scale * broadcast``.
    """
    V = stack_votes(votes)
    M = V.shape[0]
    if M % 2 == 0:
        raise AggregationConfigError(f"error feedback needs an odd total voter count, got {M}")
    if M != state.divisor:
        raise AggregationConfigError(f"state was built for {state.divisor} voters, got {M}")
    if V.shape[1] != state.scaled_residual.shape[0]:
        raise ValueError("vote length does not match residual length")
    # M * (mean vote + residual); odd because the vote sum is odd and s is even
    arg = V.sum(axis=0) + state.scaled_residual
    broadcast = _sign_of_sum(arg)
    new_s = arg - broadcast
    return broadcast, 1.0 / M, ResidualState(new_s, M, state.rounds + 1)


def ef_invariants_hold(arg_scaled, scaled_residual, M: int) -> bool:
    """Parity and contraction checks for one EF step.

    ``arg_scaled`` is ``M * x`` with ``x`` the compressor input. Requires every
    residual entry even, every argument odd (so nonzero), and
    ``||sign(x)/M - x||^2 < ||x||^2``.
    """
    arg_scaled = np.asarray(arg_scaled, dtype=np.int64)
    s = np.asarray(scaled_residual, dtype=np.int64)
    if np.any(s % 2 != 0) or np.any(arg_scaled % 2 == 0):
        return False
    # 2|x_i| > 1/M  <=>  2|arg_i| > 1, then the squared-error inequality follows
    if np.any(2 * np.abs(arg_scaled) <= 1):
        return False
    x = arg_scaled / M
    return bool(np.sum((np.sign(x) / M - x) ** 2) < np.sum(x**2))
