"""Noise calibration and Gaussian-DP accounting for dp-sign."""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.optimize import bisect
from scipy.special import ndtr

EPS_BRACKET = (0.0, 64.0)


def calibrate_sigma(eps: float, delta: float, delta2: float) -> float:
    """Gaussian scale ``(delta2 / eps) * sqrt(2 ln(1.25 / delta))``."""
    if not 0 < eps < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not delta2 > 0:
        raise ValueError("L2 sensitivity must be positive")
    return (delta2 / eps) * math.sqrt(2.0 * math.log(1.25 / delta))


def calibrate_lambda(eps: float, delta1: float) -> float:
    if not eps > 0 or not delta1 > 0:
        raise ValueError("epsilon and L1 sensitivity must be positive")
    return delta1 / eps


def compose_gdp(sigma: float, delta2: float, T: int) -> float:
    """GDP parameter ``mu`` after ``T`` Gaussian releases of sensitivity ``delta2``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if T < 1:
        raise ValueError("T must be >= 1")
    return math.sqrt(T) * delta2 / sigma


def mu_to_delta(mu: float, eps: float) -> float:
    """``delta(eps) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)``, clamped to [0, 1]."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    if eps < 0:
        raise ValueError("epsilon must be >= 0")
    a = ndtr(-eps / mu + mu / 2.0)
    b_term = ndtr(-eps / mu - mu / 2.0)
    # e^eps * Phi(.) can overflow for large eps even though the product is tiny
    second = math.exp(eps + math.log(b_term)) if b_term > 0 else 0.0
    return min(1.0, max(0.0, float(a - second)))


def mu_to_eps(mu: float, delta: float, tol: float = 1e-10) -> float:
    """Smallest ``eps >= 0`` with ``mu_to_delta(mu, eps) <= delta``, by bisection."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lo, hi = EPS_BRACKET
    if delta >= mu_to_delta(mu, lo):
        return 0.0
    if mu_to_delta(mu, hi) > delta:
        raise ValueError(f"no epsilon in [{lo}, {hi}] reaches delta={delta} at mu={mu}")
    return bisect(lambda e: mu_to_delta(mu, e) - delta, lo, hi, xtol=tol)


@dataclass(frozen=True)
class PrivacyBudget:
    """Per-round calibration plus the composed budget over an accounting window."""

    mechanism: str
    epsilon: float
    delta: float
    sensitivity: float
    scale: float
    rounds: int
    mu: float | None

    @classmethod
    def gaussian(cls, epsilon: float, delta: float, delta2: float, rounds: int) -> PrivacyBudget:
        sigma = calibrate_sigma(epsilon, delta, delta2)
        return cls("gaussian", epsilon, delta, delta2, sigma, rounds, compose_gdp(sigma, delta2, rounds))

    @classmethod
    def laplace(cls, epsilon: float, delta1: float, rounds: int) -> PrivacyBudget:
        return cls("laplace", epsilon, 0.0, delta1, calibrate_lambda(epsilon, delta1), rounds, None)

    def as_dict(self, report_delta: float = 1e-5) -> dict:
        out = {
            "mechanism": self.mechanism,
            "epsilon_per_round": self.epsilon,
            "delta_per_round": self.delta,
            "sensitivity": self.sensitivity,
            "scale": self.scale,
            "rounds": self.rounds,
        }
        if self.mu is not None:
            out["mu"] = self.mu
            out["report_delta"] = report_delta
            out["composed_epsilon"] = mu_to_eps(self.mu, report_delta)
        else:
            # pure DP composes linearly
            out["composed_epsilon"] = self.epsilon * self.rounds
        return out
