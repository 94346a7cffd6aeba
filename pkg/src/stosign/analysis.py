"""Wrong-aggregation probabilities for sign majority vote: exact and Monte-Carlo
oracles, plus evaluators for the closed-form bounds on them.

Everything here works on the scalar setting of a single coordinate: ``M``
normal workers with fixed values ``u_m`` and ``B`` Byzantine voters that always
vote against ``sign(sum(u))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compressors import DpSignParams, dp_sign_probability, mapping_probability

COMPRESSORS = ("sto", "dp-gaussian", "dp-laplace")


@dataclass(frozen=True)
class ScalarEnsemble:
    u: np.ndarray
    b: float
    byzantine_count: int = 0
    allow_clamp: bool = False

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=np.float64))
        if u.ndim != 1 or u.size < 1:
            raise ValueError("ensemble needs at least one worker value")
        if not self.b > 0:
            raise ValueError("b must be positive")
        if self.byzantine_count < 0:
            raise ValueError("byzantine_count must be >= 0")
        if not self.allow_clamp and np.abs(u).max() > self.b:
            raise ValueError("b must be >= max|u_m| unless clamping is enabled")
        object.__setattr__(self, "u", u)

    @property
    def M(self) -> int:
        return self.u.size

    @property
    def total(self) -> float:
        return math.fsum(self.u)

    @property
    def true_sign(self) -> int:
        return 1 if self.total >= 0 else -1


@dataclass(frozen=True)
class BoundReport:
    exact: float
    mc_estimate: float
    mc_std_error: float
    thm1_bound: float
    cor1_bound: float
    thm3_expansion: float
    delta_M: float


def poisson_binomial_pmf(p) -> np.ndarray:
    """PMF of the number of successes among independent Bernoulli(p_m), by convolution."""
    pmf = np.array([1.0])
    for pm in np.asarray(p, dtype=np.float64):
        nxt = np.zeros(pmf.size + 1)
        nxt[:-1] = pmf * (1.0 - pm)
        nxt[1:] += pmf * pm
        pmf = nxt
    return pmf


def wrong_threshold(M: int, byzantine: int) -> int:
    """Smallest number of wrong normal votes that makes the aggregate wrong (ties count)."""
    # wrong iff Z + B >= M - Z
    return max(0, math.ceil((M - byzantine) / 2))


def exact_wrong_aggregation(p, byzantine: int = 0) -> float:
    """Exact probability that the vote is wrong, ties counted as wrong.

    ``p[m]`` is the probability that normal worker ``m`` votes against the true
    sign; ``byzantine`` extra voters always vote against it.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("need a non-empty 1-D vector of probabilities")
    if np.any((p < 0) | (p > 1)) or np.isnan(p).any():
        raise ValueError("probabilities must lie in [0, 1]")
    if byzantine < 0:
        raise ValueError("byzantine count must be >= 0")
    pmf = poisson_binomial_pmf(p)
    t = wrong_threshold(p.size, byzantine)
    return float(min(1.0, max(0.0, pmf[t:].sum())))


def sto_sign_wrong_probs(e: ScalarEnsemble):
    """Per-worker probability that sto-sign(u_m, b) disagrees with sign(sum u).

    Returns ``(p, p_bar)``. Without clamping, ``p_bar`` equals
    ``(bM - |sum u|) / (2bM)``.
    """
    p_plus = np.atleast_1d(mapping_probability(e.u, e.b))
    p = 1.0 - p_plus if e.true_sign > 0 else p_plus
    p_bar = float(p.mean())
    if np.abs(e.u).max() <= e.b:
        closed = (e.b * e.M - abs(e.total)) / (2 * e.b * e.M)
        assert math.isclose(p_bar, closed, rel_tol=1e-9, abs_tol=1e-12), (p_bar, closed)
    return p, p_bar


def dp_sign_wrong_probs(u, params: DpSignParams) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    p_plus = np.atleast_1d(dp_sign_probability(u, params))
    return 1.0 - p_plus if math.fsum(u) >= 0 else p_plus


def _plus_probs(e: ScalarEnsemble, compressor: str, dp_scale: float | None) -> np.ndarray:
    if compressor == "sto":
        return np.atleast_1d(mapping_probability(e.u, e.b))
    if compressor not in COMPRESSORS:
        raise ValueError(f"unknown compressor {compressor!r}")
    if dp_scale is None:
        raise ValueError(f"{compressor} needs dp_scale")
    if compressor == "dp-gaussian":
        params = DpSignParams("gaussian", sigma=dp_scale)
    else:
        params = DpSignParams("laplace", lam=dp_scale)
    return np.atleast_1d(dp_sign_probability(e.u, params))


def wrong_probs(e: ScalarEnsemble, compressor: str = "sto", dp_scale: float | None = None) -> np.ndarray:
    p_plus = _plus_probs(e, compressor, dp_scale)
    return 1.0 - p_plus if e.true_sign > 0 else p_plus


def mc_wrong_aggregation(e: ScalarEnsemble, compressor: str, trials: int,
                         rng: np.random.Generator, dp_scale: float | None = None,
                         chunk: int = 20_000):
    """Simulate the vote ``trials`` times; return ``(estimate, std_error)``.

    Ties count as wrong, matching :func:`exact_wrong_aggregation`.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p_plus = _plus_probs(e, compressor, dp_scale)
    s = e.true_sign
    wrong = 0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        votes = np.where(rng.random((n, e.M)) < p_plus, 1, -1)
        total = votes.sum(axis=1) - s * e.byzantine_count
        wrong += int(np.count_nonzero(s * total <= 0))
        done += n
    est = wrong / trials
    return est, math.sqrt(est * (1.0 - est) / trials)


def _pow_half_m(base: float, M: int) -> float:
    """``base ** (M/2)`` for ``base`` in [0, 1], via logs when the base is tiny."""
    if base <= 0.0:
        return 0.0
    if base < 1e-12:
        return math.exp(0.5 * M * math.log(base))
    return base ** (0.5 * M)


def bound_thm1(p_bar: float, M: int) -> float:
    """``[4 p_bar (1 - p_bar)]^(M/2)``, valid for ``p_bar < 1/2``."""
    if not 0 <= p_bar < 0.5:
        raise ValueError("p_bar must lie in [0, 1/2); the bound is vacuous otherwise")
    return _pow_half_m(4.0 * p_bar * (1.0 - p_bar), M)


def bound_cor1(e: ScalarEnsemble) -> float:
    """``(1 - x^2)^(M/2)`` with ``x = |sum u| / (bM)``."""
    x = abs(e.total) / (e.b * e.M)
    if x > 1.0:
        raise ValueError("x > 1: b is below max|u_m|")
    if x == 1.0:
        return 0.0
    # log1p keeps 1 - x^2 accurate when x is small
    return math.exp(0.5 * e.M * math.log1p(-x * x))


def expansion_thm3(e: ScalarEnsemble) -> float:
    """Two leading terms of the large-``b`` expansion of the wrong-aggregation probability."""
    M = e.M
    if M % 2 == 0:
        raise ValueError("the expansion needs an odd number of workers")
    coef = math.comb(M - 1, (M - 1) // 2) / 2**M
    return 0.5 - coef * abs(e.total) / e.b


def delta_M(M: int, c: float) -> float:
    """Root of ``(1 - x^2)^(M/2) = (1 - c)/2`` on [0, 1]."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    return math.sqrt(-math.expm1((2.0 / M) * math.log((1.0 - c) / 2.0)))


def byzantine_lhs(p_bar: float, M: int, k: int) -> float:
    """Left side of the second Byzantine-tolerance condition.

    ``[(M-k)(1-p)/((M+k)p)]^(k/2) (sqrt((M-k)/(M+k)) + sqrt((M+k)/(M-k)))^M [p(1-p)]^(M/2)``,
    evaluated in log space so ``p = 0`` is handled as a limit.
    """
    if not 0 <= k < M:
        raise ValueError("need 0 <= k < M")
    if not 0 <= p_bar <= 1:
        raise ValueError("p_bar must lie in [0, 1]")
    if p_bar == 0.0 or p_bar == 1.0:
        return 0.0
    r = (M - k) / (M + k)
    log_val = (
        0.5 * (M - k) * math.log(p_bar)
        + 0.5 * (M + k) * math.log1p(-p_bar)
        + 0.5 * k * math.log(r)
        + M * math.log(math.sqrt(r) + 1.0 / math.sqrt(r))
    )
    return math.exp(log_val)


def byzantine_condition(p_bar: float, M: int, k: int, c: float) -> bool:
    """Whether ``k`` always-wrong attackers are tolerated at average wrong-sign rate ``p_bar``."""
    if not 0 <= k < M:
        raise ValueError("need 0 <= k < M")
    if p_bar > (M - k) / (2 * M):
        return False
    return byzantine_lhs(p_bar, M, k) <= (1.0 - c) / 2.0


def max_tolerable_k(e: ScalarEnsemble) -> int:
    """``floor(|sum u| / b)``, capped at ``M - 1``."""
    total = abs(e.total)
    if total == 0.0:
        return 0
    return min(math.floor(total / e.b), e.M - 1)


def bound_dissimilarity(B: float, M: int) -> float:
    """``(1 - 1/B^2)^(M/2)`` under coordinate-wise gradient dissimilarity ``B``."""
    if B < 1:
        raise ValueError("dissimilarity B must be >= 1")
    if math.isinf(B):
        return 1.0
    return _pow_half_m(1.0 - 1.0 / (B * B), M)


def bound_report(e: ScalarEnsemble, c: float, trials: int, rng: np.random.Generator) -> BoundReport:
    p, p_bar = sto_sign_wrong_probs(e)
    est, se = mc_wrong_aggregation(e, "sto", trials, rng)
    return BoundReport(
        exact=exact_wrong_aggregation(p, e.byzantine_count),
        mc_estimate=est,
        mc_std_error=se,
        thm1_bound=bound_thm1(p_bar, e.M) if p_bar < 0.5 else 1.0,
        cor1_bound=bound_cor1(e),
        thm3_expansion=expansion_thm3(e) if e.M % 2 else float("nan"),
        delta_M=delta_M(e.M, c),
    )
