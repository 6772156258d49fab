"""Parametric Markov sources: Jeffreys-prior sampling, generation, entropy and
divergence computations for compound (mixture) sources.

Conventions:
- A model of order r over alphabet [k] has one transition row per context.
  Context index = the previous r symbols read as a base-k number, oldest
  symbol in the most significant digit.
- All rates and divergences are in bits per symbol.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidParameterError, NumericalFailureError

_LN2 = math.log(2.0)

# state spaces larger than this use damped power iteration instead of a dense solve
_DENSE_STATE_LIMIT = 4096


def _row_entropy_bits(rows: np.ndarray) -> np.ndarray:
    """Entropy of each probability row, in bits (0 log 0 = 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(rows > 0.0, rows * np.log2(rows), 0.0)
    return -t.sum(axis=1)


@dataclass
class MarkovModel:
    """A k-ary Markov source of a given order with row-stochastic transitions."""

    k: int
    order: int
    rows: np.ndarray

    def __post_init__(self):
        if self.k < 2:
            raise InvalidParameterError(f"alphabet size must be >= 2, got {self.k}")
        if self.order < 0:
            raise InvalidParameterError(f"order must be >= 0, got {self.order}")
        rows = np.asarray(self.rows, dtype=np.float64)
        expected = (self.k**self.order, self.k)
        if rows.shape != expected:
            raise InvalidParameterError(
                f"rows shape {rows.shape} does not match {expected}"
            )
        if np.any(rows < 0.0) or np.any(rows > 1.0):
            raise InvalidParameterError("transition probabilities must lie in [0, 1]")
        sums = rows.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise InvalidParameterError("every transition row must sum to 1 (1e-12)")
        self.rows = rows

    @property
    def d(self) -> int:
        """Free parameter count: k^order * (k - 1)."""
        return self.k**self.order * (self.k - 1)

    @property
    def num_states(self) -> int:
        return self.k**self.order

    @cached_property
    def stationary(self) -> np.ndarray:
        """Stationary distribution over the k^order contexts."""
        return stationary_distribution(self)


@dataclass
class CompoundSource:
    """A mixture of K Markov sources selected per sequence with distribution p."""

    models: list[MarkovModel]
    p: np.ndarray

    def __post_init__(self):
        if not self.models:
            raise InvalidParameterError("a compound source needs at least one model")
        k, order = self.models[0].k, self.models[0].order
        for m in self.models:
            if m.k != k or m.order != order:
                raise InvalidParameterError("all component models must share k and order")
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (len(self.models),):
            raise InvalidParameterError("p must have one entry per model")
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("p must be a probability vector (sum 1 within 1e-12)")
        self.p = p

    @property
    def K(self) -> int:
        return len(self.models)

    @property
    def k(self) -> int:
        return self.models[0].k

    @property
    def order(self) -> int:
        return self.models[0].order


@dataclass
class MemoryStore:
    """Previously observed sequences shared by encoder and decoder, with
    optional source labels."""

    sequences: list[np.ndarray]
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.sequences = [np.asarray(s, dtype=np.int64) for s in self.sequences]
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (len(self.sequences),):
                raise InvalidParameterError("labels must have one entry per sequence")
            self.labels = labels

    @property
    def T(self) -> int:
        return len(self.sequences)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([s.size for s in self.sequences], dtype=np.int64)

    @property
    def total(self) -> int:
        return int(sum(s.size for s in self.sequences))

    def subset(self, indices) -> "MemoryStore":
        idx = np.asarray(indices, dtype=np.int64)
        labels = self.labels[idx] if self.labels is not None else None
        return MemoryStore([self.sequences[int(i)] for i in idx], labels)


def stationary_distribution(model: MarkovModel) -> np.ndarray:
    """Stationary distribution over contexts, solved to ~1e-12 residual.

    Raises NumericalFailureError when the chain has no unique stationary
    distribution (reducible chain) or the solve does not converge.
    """
    S, k = model.num_states, model.k
    if model.order == 0:
        return np.ones(1)
    # context transition: state s emits x with prob rows[s, x], moving to
    # (s*k + x) mod S
    if S <= _DENSE_STATE_LIMIT:
        P = np.zeros((S, S))
        dest = (np.arange(S)[:, None] * k + np.arange(k)[None, :]) % S
        np.add.at(P, (np.repeat(np.arange(S), k), dest.ravel()), model.rows.ravel())
        M = P.T - np.eye(S)
        M[-1, :] = 1.0
        b = np.zeros(S)
        b[-1] = 1.0
        try:
            pi = np.linalg.solve(M, b)
        except np.linalg.LinAlgError as e:
            raise NumericalFailureError(f"stationary solve failed: {e}") from e
        resid = float(np.abs(pi @ P - pi).max())
        if not np.all(np.isfinite(pi)) or resid > 1e-9 or pi.min() < -1e-9:
            raise NumericalFailureError(
                f"stationary solve did not converge (residual {resid:.2e})"
            )
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()
    # damped power iteration for big state spaces; damping removes periodicity
    pi = np.ones(S) / S
    idx = np.arange(S)
    for _ in range(200_000):
        nxt = np.zeros(S)
        for x in range(k):
            np.add.at(nxt, (idx * k + x) % S, pi * model.rows[:, x])
        nxt = 0.5 * pi + 0.5 * nxt
        if np.abs(nxt - pi).sum() < 1e-13:
            return nxt / nxt.sum()
        pi = nxt
    raise NumericalFailureError("power iteration for stationary distribution stalled")


def sample_jeffreys(k: int, order: int, seed) -> MarkovModel:
    """Draw a model from Jeffreys' prior: each transition row ~ Dirichlet(1/2,...,1/2)."""
    if k < 2 or order < 0:
        raise InvalidParameterError(f"need k >= 2 and order >= 0, got k={k}, order={order}")
    rng = np.random.default_rng(seed)
    rows = rng.dirichlet(np.full(k, 0.5), size=k**order)
    return MarkovModel(k=k, order=order, rows=rows)


def generate(model: MarkovModel, n: int, seed) -> np.ndarray:
    """Generate n symbols, starting from the stationary distribution of the chain."""
    if n < 0:
        raise InvalidParameterError(f"n must be >= 0, got {n}")
    rng = np.random.default_rng(seed)
    k, r, S = model.k, model.order, model.num_states
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if r == 0:
        cum = np.cumsum(model.rows[0])
        out = np.searchsorted(cum, rng.random(n), side="right")
        return np.minimum(out, k - 1).astype(np.int64)
    state = int(rng.choice(S, p=model.stationary))
    u = rng.random(n)
    cums = np.cumsum(model.rows, axis=1)
    out = np.empty(n, dtype=np.int64)
    if S * n <= 32_000_000 and S <= 64:
        # successor table per state, then a cheap scalar walk
        succ = [np.minimum(np.searchsorted(cums[s], u, side="right"), k - 1).tolist()
                for s in range(S)]
        s = state
        for t in range(n):
            x = succ[s][t]
            out[t] = x
            s = (s * k + x) % S
    else:
        cum_lists = [c.tolist() for c in cums]
        ul = u.tolist()
        s = state
        km1 = k - 1
        for t in range(n):
            x = bisect_right(cum_lists[s], ul[t])
            if x > km1:
                x = km1
            out[t] = x
            s = (s * k + x) % S
    return out


def entropy_rate(model: MarkovModel) -> float:
    """Stationary entropy rate in bits per symbol."""
    return float(model.stationary @ _row_entropy_bits(model.rows))


def empirical_entropy(seq: np.ndarray, order: int, k: int) -> float:
    """Plug-in conditional entropy of the given order from empirical counts.

    Contexts that never occur contribute zero. Requires len(seq) > k**order.
    """
    if order < 0:
        raise InvalidParameterError(f"order must be >= 0, got {order}")
    x = np.asarray(seq, dtype=np.int64)
    n = x.size
    if n <= k**order:
        raise InvalidParameterError(
            f"sequence of length {n} too short for order-{order} entropy over k={k}"
        )
    c = np.zeros(n - order, dtype=np.int64)
    for j in range(order):
        c = c * k + x[j : n - order + j]
    pairs = c * k + x[order:]
    uniq, cnt = np.unique(pairs, return_counts=True)
    ctx = uniq // k
    starts = np.flatnonzero(np.r_[True, ctx[1:] != ctx[:-1]])
    ctx_tot = np.add.reduceat(cnt, starts)
    tot_per_pair = np.repeat(ctx_tot, np.diff(np.r_[starts, cnt.size]))
    total = float(cnt.sum())
    return float(np.sum((cnt / total) * np.log2(tot_per_pair / cnt)))


def sample_compound(
    compound: CompoundSource,
    T: int,
    seed,
    *,
    length: int | None = None,
    length_range: tuple[int, int] | None = None,
) -> MemoryStore:
    """Draw T labelled sequences: label ~ p, sequence from the labelled model.

    Lengths follow a fixed-length law (`length`) or a uniform integer law over
    `length_range` (inclusive).
    """
    if T < 0:
        raise InvalidParameterError(f"T must be >= 0, got {T}")
    if (length is None) == (length_range is None):
        raise InvalidParameterError("pass exactly one of length / length_range")
    rng = np.random.default_rng(seed)
    labels = rng.choice(compound.K, size=T, p=compound.p) if T else np.empty(0, np.int64)
    if length is not None:
        lengths = np.full(T, int(length), dtype=np.int64)
    else:
        lo, hi = length_range
        if lo < 1 or hi < lo:
            raise InvalidParameterError(f"bad length range ({lo}, {hi})")
        lengths = rng.integers(lo, hi + 1, size=T)
    seqs = [generate(compound.models[int(z)], int(m), rng) for z, m in zip(labels, lengths)]
    return MemoryStore(seqs, labels=np.asarray(labels, dtype=np.int64))


# ---------------------------------------------------------------------------
# Block probabilities and divergences
# ---------------------------------------------------------------------------


def _block_marginal(model: MarkovModel, length: int) -> np.ndarray:
    """Stationary probability of every block of `length` <= order symbols."""
    r, k = model.order, model.k
    pi = model.stationary
    if length == r:
        return pi
    # marginalise the trailing (newest) r - length symbols
    return pi.reshape(k**length, k ** (r - length)).sum(axis=1)


def block_log2_probs(model: MarkovModel, codes: np.ndarray, length: int) -> np.ndarray:
    """log2 stationary probability of blocks given as base-k codes (oldest
    symbol most significant)."""
    r, k = model.order, model.k
    codes = np.asarray(codes, dtype=np.int64)
    with np.errstate(divide="ignore"):
        if length <= r:
            return np.log2(_block_marginal(model, length)[codes])
        head = codes // (k ** (length - r))
        lp = np.log2(model.stationary[head])
        for t in range(r, length):
            shift = k ** (length - 1 - t)
            prefix = codes // shift
            state = (prefix // k) % (k**r)
            sym = prefix % k
            lp = lp + np.log2(model.rows[state, sym])
    return lp


def _mixture_block_log2(compound: CompoundSource, codes: np.ndarray, length: int) -> np.ndarray:
    """log2 of the p-mixture of stationary block probabilities."""
    stack = [np.log2(pi_w) + block_log2_probs(m, codes, length)
             for pi_w, m in zip(compound.p, compound.models) if pi_w > 0.0]
    return np.logaddexp2.reduce(np.stack(stack), axis=0)


def _sequence_log2_prob(model: MarkovModel, x: np.ndarray) -> float:
    """log2 stationary block probability of a whole sequence under the model."""
    n, r, k = x.size, model.order, model.k
    if n == 0:
        return 0.0
    head_len = min(r, n)
    head_code = 0
    for j in range(head_len):
        head_code = head_code * k + int(x[j])
    lp = float(block_log2_probs(model, np.array([head_code]), head_len)[0])
    if n > r:
        c = np.zeros(n - r, dtype=np.int64)
        for j in range(r):
            c = c * k + x[j : n - r + j]
        with np.errstate(divide="ignore"):
            lp += float(np.log2(model.rows[c, x[r:]]).sum())
    return lp


def _mixture_sequence_log2(compound: CompoundSource, x: np.ndarray, depth: int) -> float:
    """log2 probability of x under the depth-limited Markov closure of the
    mixture: each symbol is scored on its previous min(t, depth) symbols via
    stationary mixture block probabilities."""
    n, k = x.size, compound.k
    if n == 0:
        return 0.0
    lp = 0.0
    # short-context head positions
    for t in range(min(depth, n)):
        num_code = 0
        for j in range(t + 1):
            num_code = num_code * k + int(x[j])
        den_code = num_code // k
        lp += float(_mixture_block_log2(compound, np.array([num_code]), t + 1)[0])
        if t > 0:
            lp -= float(_mixture_block_log2(compound, np.array([den_code]), t)[0])
    if n <= depth:
        return lp
    # full-depth windows, vectorised
    win = np.zeros(n - depth, dtype=np.int64)
    for j in range(depth + 1):
        win = win * k + x[j : n - depth + j]
    num = _mixture_block_log2(compound, win, depth + 1)
    den = _mixture_block_log2(compound, win // k, depth)
    return lp + float((num - den).sum())


@dataclass(frozen=True)
class KlRateEstimate:
    value: float
    stderr: float

    def __iter__(self):
        return iter((self.value, self.stderr))


def mixture_kl_rate(
    phi: MarkovModel,
    compound: CompoundSource,
    depth: int,
    n_mc: int,
    seed,
    *,
    seq_len: int = 10_000,
) -> KlRateEstimate:
    """Monte Carlo estimate of the per-symbol divergence between phi and the
    depth-limited mixture measure of the compound source.

    Returns a nonnegative estimate (clamped at 0) with its standard error.
    """
    if depth < compound.order or depth < phi.order:
        raise InvalidParameterError("depth must be at least the model order")
    if n_mc < 1:
        raise InvalidParameterError("n_mc must be >= 1")
    rng = np.random.default_rng(seed)
    vals = np.empty(n_mc)
    for i in range(n_mc):
        x = generate(phi, seq_len, rng)
        vals[i] = (_sequence_log2_prob(phi, x) - _mixture_sequence_log2(compound, x, depth)) / seq_len
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    return KlRateEstimate(value=max(0.0, mean), stderr=stderr)


def mixture_kl_rate_exact(phi: MarkovModel, compound: CompoundSource, depth: int) -> float:
    """Asymptotic per-symbol divergence rate between phi and the depth-limited
    mixture measure, by exact enumeration of the k**depth contexts."""
    if depth < compound.order or depth < phi.order:
        raise InvalidParameterError("depth must be at least the model order")
    k = phi.k
    if k**depth > 1 << 20:
        raise InvalidParameterError("k**depth too large for exact enumeration")
    ctx = np.arange(k**depth, dtype=np.int64)
    w_ctx = np.exp2(block_log2_probs(phi, ctx, depth))  # stationary context probs
    state = ctx % (k**phi.order)
    cond_phi = phi.rows[state]  # (k^depth, k)
    ext = ctx[:, None] * k + np.arange(k)[None, :]
    log_num = _mixture_block_log2(compound, ext.ravel(), depth + 1).reshape(-1, k)
    log_den = _mixture_block_log2(compound, ctx, depth)[:, None]
    log_bar = log_num - log_den
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(cond_phi > 0.0, cond_phi * (np.log2(cond_phi) - log_bar), 0.0)
    return max(0.0, float((w_ctx[:, None] * contrib).sum()))


def kl_rate(a: MarkovModel, b: MarkovModel) -> float:
    """Exact KL divergence rate D(a || b) in bits/symbol (may be inf)."""
    if a.k != b.k:
        raise InvalidParameterError("models must share the alphabet")
    k = a.k
    r = max(a.order, b.order)
    if k**r > 1 << 20:
        raise InvalidParameterError("state space too large for exact KL rate")
    ctx = np.arange(k**r, dtype=np.int64)
    w_ctx = np.exp2(block_log2_probs(a, ctx, r)) if r > 0 else np.ones(1)
    pa = a.rows[ctx % (k**a.order)]
    pb = b.rows[ctx % (k**b.order)]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pa > 0.0, pa * (np.log2(np.where(pa > 0, pa, 1.0)) - np.log2(pb)), 0.0)
    return float((w_ctx[:, None] * ratio).sum())
