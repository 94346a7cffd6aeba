"""Worker-side 1-bit compressors and gradient preprocessing.

Every compressor returns an ``int8`` vector over {-1, +1}. ``sign(0)`` is +1
throughout the package. Stochastic compressors consume exactly one uniform
draw per coordinate, in index order, from the stream they are given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .vectors import SIGN_DTYPE, as_gradient

B_MODES = ("fixed-scalar", "oracle-max", "theory-schedule")
DP_MECHANISMS = ("gaussian", "laplace")

# Floor for oracle-max b on coordinates where every worker gradient is zero.
# Any positive value gives probability 1/2 there.
_B_FLOOR = 1e-300


def sign_compress(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if np.isnan(g).any():
        raise ValueError("cannot take the sign of NaN")
    # -0.0 >= 0 is True, so signed zero follows the +1 convention.
    return np.where(g >= 0, 1, -1).astype(SIGN_DTYPE)


def mapping_probability(g, b):
    """Probability that sto-sign emits +1: ``(b + g) / (2b)`` clipped to [0, 1]."""
    g = np.asarray(g, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(~(b > 0)):
        raise ValueError("b must be strictly positive")
    p = np.clip((b + g) / (2.0 * b), 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class StoSignParams:
    b: np.ndarray
    mode: str = "fixed-scalar"

    def __post_init__(self):
        if self.mode not in B_MODES:
            raise ValueError(f"unknown b mode {self.mode!r}; expected one of {B_MODES}")
        b = np.asarray(self.b, dtype=np.float64)
        if b.ndim != 1 or np.any(~(b > 0)):
            raise ValueError("b must be a 1-D vector of positive entries")
        object.__setattr__(self, "b", b)

    @classmethod
    def fixed(cls, value: float, d: int) -> StoSignParams:
        return cls(np.full(d, float(value)), "fixed-scalar")

    @classmethod
    def oracle_max(cls, normal_gradients) -> StoSignParams:
        """``b_i = max_m |g_m,i|`` over the round's normal workers only."""
        G = np.atleast_2d(np.asarray(normal_gradients, dtype=np.float64))
        b = np.maximum(np.abs(G).max(axis=0), _B_FLOOR)
        return cls(b, "oracle-max")

    @classmethod
    def theory_schedule(cls, T: int, d: int) -> StoSignParams:
        return cls(np.full(d, (T * d) ** 0.25), "theory-schedule")


def sto_sign(g, params: StoSignParams, rng: np.random.Generator) -> np.ndarray:
    g = as_gradient(g)
    if g.shape != params.b.shape:
        raise ValueError(f"dimension mismatch: gradient {g.shape[0]} vs b {params.b.shape[0]}")
    p_plus = mapping_probability(g, params.b)
    return _draw(p_plus, rng)


@dataclass(frozen=True)
class DpSignParams:
    """Noise scale of dp-sign: ``sigma`` for Gaussian, ``lam`` for Laplace."""

    mechanism: str = "gaussian"
    sigma: float | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.mechanism not in DP_MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        scale, other = (self.sigma, self.lam) if self.mechanism == "gaussian" else (self.lam, self.sigma)
        if scale is None or other is not None:
            raise ValueError(f"{self.mechanism} dp-sign needs exactly its own scale set")
        if not scale > 0:
            raise ValueError("dp-sign scale must be positive")

    @property
    def scale(self) -> float:
        return self.sigma if self.mechanism == "gaussian" else self.lam


def normal_cdf(x):
    """Standard normal CDF (Cephes ``ndtr``, erf/erfc based)."""
    return ndtr(x)


def dp_sign_probability(g, params: DpSignParams):
    g = np.asarray(g, dtype=np.float64)
    if params.mechanism == "gaussian":
        p = ndtr(g / params.sigma)
    else:
        # 1/2 + 1/2 sign(g) (1 - exp(-|g|/lam)); at g = 0 both branches give 1/2
        p = 0.5 - 0.5 * np.sign(g) * np.expm1(-np.abs(g) / params.lam)
    return float(p) if np.ndim(p) == 0 else p


def dp_sign(g, params: DpSignParams, rng: np.random.Generator) -> np.ndarray:
    g = as_gradient(g)
    return _draw(dp_sign_probability(g, params), rng)


def top_k_count(d: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    # round away float noise such as 0.1 * 30 = 3.0000000000000004 before ceil
    return min(d, math.ceil(round(fraction * d, 9)))


def top_k_indices(g, fraction: float) -> np.ndarray:
    """Indices of the ``ceil(fraction * d)`` largest ``|g_i|``; ties go to the lower index."""
    g = np.asarray(g, dtype=np.float64)
    k = top_k_count(g.shape[0], fraction)
    order = np.argsort(-np.abs(g), kind="stable")
    return np.sort(order[:k])


def top_k_mask(g, fraction: float) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    out = np.zeros_like(g)
    keep = top_k_indices(g, fraction)
    out[keep] = g[keep]
    return out


def clip_l2(g, C: float) -> np.ndarray:
    if not C > 0:
        raise ValueError("clip threshold must be positive")
    g = np.asarray(g, dtype=np.float64)
    norm = np.linalg.norm(g)
    if norm <= C:
        return g.copy()
    out = g * (C / norm)
    # rounding can leave the rescaled norm one ulp above C
    while np.linalg.norm(out) > C:
        out = out * (1.0 - 2.0**-52)
    return out


def clip_rows_l2(G, C: float) -> np.ndarray:
    """Clip each row (one per training sample) to L2 norm at most ``C``."""
    if not C > 0:
        raise ValueError("clip threshold must be positive")
    G = np.asarray(G, dtype=np.float64)
    norms = np.linalg.norm(G, axis=1, keepdims=True)
    scale = np.ones_like(norms)
    np.divide(C, norms, out=scale, where=norms > C)
    out = G * scale
    over = np.linalg.norm(out, axis=1) > C
    while over.any():
        out[over] *= 1.0 - 2.0**-52
        over = np.linalg.norm(out, axis=1) > C
    return out


def byzantine_sign(target_gradient) -> np.ndarray:
    """Negated signs of the gradient the attacker knows (mean of normals or full gradient)."""
    return (-sign_compress(target_gradient)).astype(SIGN_DTYPE)


def _draw(p_plus, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(np.shape(p_plus))
    return np.where(u < p_plus, 1, -1).astype(SIGN_DTYPE)
