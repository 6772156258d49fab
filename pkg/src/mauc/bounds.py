"""Closed-form redundancy and memorization-gain bounds.

Everything here is a pure function of its inputs; logarithms are base 2. The
O(1/n) and O(1/(n*sqrt(m))) residuals of the underlying expansions are
dropped throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidParameterError, NoSolutionError

_TWO_PI_E = 2.0 * math.pi * math.e


def jeffreys_integral_log(k: int, order: int = 0) -> float:
    """log2 of the Jeffreys normalization integral for the model family.

    Order 0 (one multinomial row): log2(pi^(k/2) / Gamma(k/2)). Order r >= 1
    uses the row-product convention: k^r independent rows, so k^r times the
    order-0 value.
    """
    if k < 2:
        raise InvalidParameterError(f"alphabet size must be >= 2, got {k}")
    if order < 0:
        raise InvalidParameterError(f"order must be >= 0, got {order}")
    base = (0.5 * k) * math.log2(math.pi) - math.lgamma(0.5 * k) / math.log(2.0)
    return k**order * base


@dataclass(frozen=True)
class FamilySpec:
    """A parametric family: alphabet size, Markov order, parameter count and
    Jeffreys integral (both overridable)."""

    k: int
    order: int = 0
    d: int | None = None
    logC: float | None = None

    def __post_init__(self):
        if self.k < 2 or self.order < 0:
            raise InvalidParameterError(f"bad family (k={self.k}, order={self.order})")
        if self.d is None:
            object.__setattr__(self, "d", self.k**self.order * (self.k - 1))
        if self.d < 1:
            raise InvalidParameterError(f"d must be >= 1, got {self.d}")
        if self.logC is None:
            object.__setattr__(self, "logC", jeffreys_integral_log(self.k, self.order))
        if not math.isfinite(self.logC):
            raise InvalidParameterError("logC must be finite")


@dataclass(frozen=True)
class BoundQuery:
    """Inputs shared by the gain bounds."""

    n: int
    m: float  # symbols, may be math.inf
    entropy_rate: float  # bits per symbol
    eps: float
    p_z: float = 1.0
    H_p: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameterError(f"n must be >= 1, got {self.n}")
        if self.m < 0:
            raise InvalidParameterError(f"m must be >= 0, got {self.m}")
        if not 0.0 < self.eps < 1.0:
            raise InvalidParameterError(f"eps must be in (0,1), got {self.eps}")
        if not 0.0 < self.p_z <= 1.0:
            raise InvalidParameterError(f"p_z must be in (0,1], got {self.p_z}")
        if self.H_p < 0.0:
            raise InvalidParameterError(f"H_p must be >= 0, got {self.H_p}")


def avg_minimax_redundancy(family: FamilySpec, n: int) -> float:
    """(d/2) log2(n / (2 pi e)) + logC, the leading average minimax redundancy."""
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    return 0.5 * family.d * math.log2(n / _TWO_PI_E) + family.logC


def _tail_raw(family: FamilySpec, n: int, delta: float) -> float:
    return 1.0 - 2.0 ** (-family.logC) * (_TWO_PI_E / n**delta) ** (0.5 * family.d)


def theorem1_tail(family: FamilySpec, n: int, delta: float) -> float:
    """Lower bound on the probability that the redundancy of a Jeffreys-drawn
    source exceeds (1-delta) (d/2) log2 n, clamped to [0, 1]."""
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    return min(1.0, max(0.0, _tail_raw(family, n, delta)))


def solve_delta(family: FamilySpec, n: int, eps: float) -> float:
    """delta* with tail(delta*) = 1 - eps, found by bisection (residual < 1e-9).

    May fall outside [0, 1]; reported as-is.
    """
    if not 0.0 < eps < 1.0:
        raise InvalidParameterError(f"eps must be in (0,1), got {eps}")
    if n < 2:
        raise NoSolutionError("tail is constant in delta for n = 1")
    target = 1.0 - eps
    lo, hi = -1.0, 2.0
    for _ in range(200):
        if _tail_raw(family, n, lo) < target:
            break
        lo *= 2.0
    else:
        raise NoSolutionError("no lower bracket for delta")
    for _ in range(200):
        if _tail_raw(family, n, hi) > target:
            break
        hi *= 2.0
    else:
        raise NoSolutionError("no upper bracket for delta")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _tail_raw(family, n, mid) < target:
            lo = mid
        else:
            hi = mid
        if abs(_tail_raw(family, n, mid) - target) < 1e-9 and hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def solve_delta_closed_form(family: FamilySpec, n: int, eps: float) -> float:
    """Algebraic inversion of the tail formula (used as a cross-check)."""
    if n < 2:
        raise NoSolutionError("tail is constant in delta for n = 1")
    return (math.log2(_TWO_PI_E)
            + (2.0 / family.d) * (math.log2(1.0 / eps) - family.logC)) / math.log2(n)


def overhead_curve(family: FamilySpec, n: int, entropy_rate: float, eps: float) -> float:
    """Expected-length-to-entropy ratio 1 + (1-delta*)(d/2) log2 n / (n rate),
    with the redundancy term clamped at zero from below."""
    if entropy_rate <= 0.0:
        raise InvalidParameterError("entropy_rate must be positive")
    delta = solve_delta(family, n, eps)
    redundancy = max(0.0, (1.0 - delta) * 0.5 * family.d * math.log2(n))
    return 1.0 + redundancy / (n * entropy_rate)


def rhat1(n: int, m: float, d: int) -> float:
    """Residual redundancy with memory m for a single source: (d/2) log2(1 + n/m) + 2."""
    if m == 0:
        raise InvalidParameterError("rhat1 undefined for m = 0")
    if math.isinf(m):
        return 2.0
    return 0.5 * d * math.log2(1.0 + n / m) + 2.0


def rhat2(n: int, m: float, d: int, p_z: float, H_p: float) -> float:
    """Residual redundancy with clustered memory: (d/2) log2(1 + n/(p_z m)) + 3 + H(p)."""
    if m == 0:
        raise InvalidParameterError("rhat2 undefined for m = 0")
    if not 0.0 < p_z <= 1.0:
        raise InvalidParameterError(f"p_z must be in (0,1], got {p_z}")
    if math.isinf(m):
        return 3.0 + H_p
    return 0.5 * d * math.log2(1.0 + n / (p_z * m)) + 3.0 + H_p


def _gain_lb(query: BoundQuery, family: FamilySpec, rhat: float) -> float:
    H_n = query.n * query.entropy_rate
    if H_n <= 0.0:
        raise InvalidParameterError("entropy rate must be positive")
    rbar = avg_minimax_redundancy(family, query.n)
    return 1.0 + (rbar + math.log2(query.eps) - rhat) / (H_n + rhat)


def gain_lb_k1(query: BoundQuery, family: FamilySpec) -> float:
    """Single-source memorization gain lower bound (may be < 1)."""
    return _gain_lb(query, family, rhat1(query.n, query.m, family.d))


def gain_lb_cm(query: BoundQuery, family: FamilySpec) -> float:
    """Clustered-memory gain lower bound (uses p_z and H_p)."""
    return _gain_lb(query, family,
                    rhat2(query.n, query.m, family.d, query.p_z, query.H_p))


@dataclass(frozen=True)
class UcompMGainBound:
    bound: float
    crossover_n: float

    def __iter__(self):
        return iter((self.bound, self.crossover_n))


def ucompm_gain_ub(n: int, family: FamilySpec, entropy_rate: float,
                   kl_rate: float) -> UcompMGainBound:
    """Unclustered-memory gain upper bound (H_n + Rbar_n) / (H_n + n kl_rate),
    with the crossover length n* where the bound falls to 1 (inf if kl_rate=0)."""
    if kl_rate < 0.0:
        raise InvalidParameterError("kl_rate must be >= 0")
    if entropy_rate <= 0.0:
        raise InvalidParameterError("entropy_rate must be positive")
    H_n = n * entropy_rate
    bound = (H_n + avg_minimax_redundancy(family, n)) / (H_n + n * kl_rate)
    if kl_rate == 0.0:
        return UcompMGainBound(bound=bound, crossover_n=math.inf)

    def f(x: float) -> float:  # bound = 1  <=>  Rbar(x) = x * kl_rate
        return 0.5 * family.d * math.log2(x / _TWO_PI_E) + family.logC - x * kl_rate

    lo = 1.0
    if f(lo) <= 0.0:
        return UcompMGainBound(bound=bound, crossover_n=1.0)
    hi = 2.0
    while f(hi) > 0.0:
        hi *= 2.0
        if hi > 2.0**200:
            raise NoSolutionError("no crossover found for the gain upper bound")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return UcompMGainBound(bound=bound, crossover_n=0.5 * (lo + hi))


def entropy_of_p(p) -> float:
    """Entropy of a probability vector in bits (0 log 0 = 0)."""
    total = math.fsum(p)
    if abs(total - 1.0) > 1e-9 or any(x < 0 for x in p):
        raise InvalidParameterError("p must be a probability vector")
    return -math.fsum(x * math.log2(x) for x in p if x > 0.0)


def proposition4_limit_check(family: FamilySpec, query_grid) -> list[dict]:
    """Evaluate the single-source gain bound over a grid of (n, m, rate, eps);
    rows carry the gain and its distance to the large-n limit 1."""
    rows = []
    for q in query_grid:
        g = gain_lb_k1(q, family)
        rows.append({"n": q.n, "m": q.m, "entropy_rate": q.entropy_rate,
                     "eps": q.eps, "gain_lb": g, "dist_to_one": abs(g - 1.0)})
    return rows
