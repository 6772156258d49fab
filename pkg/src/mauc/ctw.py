"""k-ary Context Tree Weighting over Krichevsky-Trofimov node estimators.

Two evaluation paths share one probability model:

- ContextTree: sequential updates, one symbol at a time. Needed wherever the
  per-symbol predictive distribution matters (the arithmetic coder).
- batch_codelength: the total CTW codelength of a corpus from final per-node
  count tables. KT is exchangeable, so the weighted probability of a corpus
  depends only on the counts each node ends up with; gamma functions give the
  block probability directly. This is the fast path for experiments and
  clustering, and it matches the sequential sum telescopically.

Context handling: the context of a symbol is the previous `depth` symbols,
zero-padded at the start of every sequence. Context codes put the most recent
symbol in the least significant base-k digit so that depth-l prefixes are
plain modular reductions.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import InvalidParameterError

_LN2 = math.log(2.0)


def kt_symbol_prob(counts, symbol: int, k: int) -> float:
    """Krichevsky-Trofimov estimate (counts[symbol] + 1/2) / (total + k/2)."""
    counts = np.asarray(counts, dtype=np.float64)
    if symbol < 0 or symbol >= k:
        raise InvalidParameterError(f"symbol {symbol} outside alphabet of size {k}")
    if counts.shape != (k,) or np.any(counts < 0):
        raise InvalidParameterError("counts must be k nonnegative values")
    return float((counts[symbol] + 0.5) / (counts.sum() + 0.5 * k))


def _half_mix(a: float, b: float) -> float:
    """log2(2^a / 2 + 2^b / 2), stable in the log domain."""
    if a < b:
        a, b = b, a
    d = b - a
    if d < -60.0:
        return a - 1.0
    return a - 1.0 + math.log2(1.0 + 2.0**d)


class ContextTree:
    """Single-writer CTW state. Clone before encoding concurrently."""

    def __init__(self, k: int, depth: int):
        if k < 2:
            raise InvalidParameterError(f"alphabet size must be >= 2, got {k}")
        if depth < 0:
            raise InvalidParameterError(f"depth must be >= 0, got {depth}")
        if k ** (depth + 1) > 1 << 62:
            raise InvalidParameterError(f"k**(depth+1) too large (k={k}, depth={depth})")
        self.k = k
        self.depth = depth
        # node id = bases[l] + context code; value = [counts, total, log_pe, log_pw, child_sum]
        self.nodes: dict[int, list] = {}
        self._kpow = [k**l for l in range(depth + 1)]
        self._bases = [(k**l - 1) // (k - 1) for l in range(depth + 1)]
        self._ctx = 0
        self._updates = 0

    def reset_context(self) -> None:
        """Re-pad the context with zeros (sequence boundary)."""
        self._ctx = 0

    def clone(self) -> "ContextTree":
        t = ContextTree(self.k, self.depth)
        t.nodes = {i: [nd[0].copy(), nd[1], nd[2], nd[3], nd[4]] for i, nd in self.nodes.items()}
        t._ctx = self._ctx
        t._updates = self._updates
        return t

    def _path_ids(self) -> list[int]:
        ctx = self._ctx
        bases, kpow = self._bases, self._kpow
        return [bases[l] + ctx % kpow[l] for l in range(self.depth + 1)]

    def update(self, symbol: int) -> float:
        """Account one symbol; return its log2 probability under CTW weighting."""
        k, depth = self.k, self.depth
        if symbol < 0 or symbol >= k:
            raise InvalidParameterError(f"symbol {symbol} outside alphabet of size {k}")
        ids = self._path_ids()
        nodes = self.nodes
        half_k = 0.5 * k
        child_delta = 0.0
        for l in range(depth, -1, -1):
            nd = nodes.get(ids[l])
            if nd is None:
                nd = [np.zeros(k), 0.0, 0.0, 0.0, 0.0]
                nodes[ids[l]] = nd
            counts = nd[0]
            lpe = nd[2] + math.log2((counts[symbol] + 0.5) / (nd[1] + half_k))
            counts[symbol] += 1.0
            nd[1] += 1.0
            nd[2] = lpe
            lpw_old = nd[3]
            if l == depth:
                lpw_new = lpe
            else:
                nd[4] += child_delta
                lpw_new = _half_mix(lpe, nd[4])
            nd[3] = lpw_new
            child_delta = lpw_new - lpw_old
        self._ctx = (symbol + self._ctx * k) % self._kpow[depth] if depth else 0
        self._updates += 1
        return child_delta

    def predictive(self) -> np.ndarray:
        """Predictive distribution over the next symbol in the current context."""
        k = self.k
        ids = self._path_ids()
        half_k = 0.5 * k
        nd = self.nodes.get(ids[self.depth])
        if nd is None:
            p = np.full(k, 1.0 / k)
        else:
            p = (nd[0] + 0.5) / (nd[1] + half_k)
        for l in range(self.depth - 1, -1, -1):
            nd = self.nodes.get(ids[l])
            if nd is None:
                kt = np.full(k, 1.0 / k)
                beta = 0.5
            else:
                kt = (nd[0] + 0.5) / (nd[1] + half_k)
                diff = nd[4] - nd[2]  # child product vs local estimator, log2
                if diff > 60.0:
                    beta = 0.0
                elif diff < -60.0:
                    beta = 1.0
                else:
                    beta = 1.0 / (1.0 + 2.0**diff)
            p = beta * kt + (1.0 - beta) * p
        return p

    def prime(self, sequences: Iterable[np.ndarray]) -> "ContextTree":
        """Run updates over every memory sequence in order, outputs discarded.

        The context is re-padded at each sequence boundary and after priming,
        so the next encoded sequence starts from a clean context.
        """
        k = self.k
        for seq in sequences:
            arr = np.asarray(seq)
            if arr.size and (arr.min() < 0 or arr.max() >= k):
                raise InvalidParameterError("memory sequence symbols outside alphabet")
            self.reset_context()
            for s in arr.tolist():
                self.update(s)
        self.reset_context()
        return self

    def total_log2_prob(self) -> float:
        """log2 of the root weighted probability of everything seen so far."""
        root = self.nodes.get(0)
        return root[3] if root is not None else 0.0


def _context_codes(x: np.ndarray, k: int, depth: int) -> np.ndarray:
    """Full-depth context code at each position, zero-padded at the start."""
    n = x.size
    c = np.zeros(n, dtype=np.int64)
    for j in range(1, depth + 1):
        if j > n:
            break
        c[j:] += x[:-j] * (k ** (j - 1))
    return c


def sequence_pair_counts(k: int, depth: int, x) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-level deduplicated ((node, symbol) key, count) tables for one
    zero-padded sequence.

    Precompute these once per sequence when the same sequence enters many
    codelength evaluations (the MDL clusterer does).
    """
    x = np.asarray(x, dtype=np.int64)
    if x.size and (x.min() < 0 or x.max() >= k):
        raise InvalidParameterError("sequence symbols outside alphabet")
    ctx = _context_codes(x, k, depth)
    out = []
    for l in range(depth + 1):
        keys, cnt = np.unique((ctx % (k**l)) * k + x, return_counts=True)
        out.append((keys, cnt))
    return out


def codelength_from_counts(
    k: int, depth: int, members: Sequence[list[tuple[np.ndarray, np.ndarray]]]
) -> float:
    """CTW ideal codelength from precomputed per-sequence count tables."""
    members = [m for m in members if m[0][0].size]
    if not members:
        return 0.0
    lg_half = gammaln(0.5)
    lg_k2 = gammaln(0.5 * k)
    child_codes: np.ndarray | None = None
    child_lpw: np.ndarray | None = None
    for l in range(depth, -1, -1):
        if len(members) == 1:
            keys, cnt = members[0][l]
        else:
            raw = np.concatenate([m[l][0] for m in members])
            wts = np.concatenate([m[l][1] for m in members])
            order = np.argsort(raw, kind="stable")
            raw, wts = raw[order], wts[order]
            first = np.r_[True, raw[1:] != raw[:-1]]
            keys = raw[first]
            cnt = np.add.reduceat(wts, np.flatnonzero(first))
        node_of_key = keys // k
        starts = np.flatnonzero(np.r_[True, node_of_key[1:] != node_of_key[:-1]])
        codes = node_of_key[starts]
        tot = np.add.reduceat(cnt, starts)
        term = np.add.reduceat(gammaln(cnt + 0.5) - lg_half, starts)
        log_pe = (term + lg_k2 - gammaln(tot + 0.5 * k)) / _LN2
        if l == depth:
            log_pw = log_pe
        else:
            parent = child_codes % (k**l)
            child_sum = np.zeros(codes.size)
            idx = np.searchsorted(codes, parent)
            assert np.array_equal(codes[idx], parent)
            np.add.at(child_sum, idx, child_lpw)
            m = np.maximum(log_pe, child_sum)
            log_pw = m - 1.0 + np.log2(1.0 + np.exp2(np.minimum(log_pe, child_sum) - m))
        child_codes, child_lpw = codes, log_pw
    assert child_codes.size == 1 and child_codes[0] == 0
    return float(-child_lpw[0])


def batch_codelength(k: int, depth: int, chunks: Sequence[np.ndarray]) -> float:
    """Total CTW ideal codelength (bits) of the chunks coded in order with one
    tree, context reset at each chunk boundary.

    Equals -log2 of the root weighted probability of the final tree, which in
    turn equals the sum of sequential per-symbol codelengths.
    """
    if k < 2:
        raise InvalidParameterError(f"alphabet size must be >= 2, got {k}")
    if depth < 0 or k ** (depth + 1) > 1 << 62:
        raise InvalidParameterError(f"bad depth {depth} for k={k}")
    members = [sequence_pair_counts(k, depth, c) for c in chunks]
    return codelength_from_counts(k, depth, members)
