"""MDL clustering of memorized sequences and MDL classification of new ones.

A cluster's description length is the CTW ideal codelength of its members
coded with one shared tree (context reset at boundaries) plus log2(T) header
bits, where T is the memory size. Sequences are grouped so the corpus
compresses well together; a new sequence joins the cluster whose description
length it inflates the least.

Cluster ids are 1-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctw import codelength_from_counts, sequence_pair_counts
from .errors import InvalidParameterError
from .source_model import MemoryStore, empirical_entropy

# moves must shorten the corpus by more than this to be accepted
_IMPROVEMENT_EPS = 1e-6


@dataclass
class ClusterState:
    """Assignment of T sequences to K clusters with per-cluster codelengths."""

    K: int
    assignment: np.ndarray  # 1-based cluster ids, length T
    per_cluster_dl: list[float]
    total_dl: float

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.assignment.size and (
            self.assignment.min() < 1 or self.assignment.max() > self.K
        ):
            raise InvalidParameterError("cluster ids must lie in [1, K]")
        if len(self.per_cluster_dl) != self.K:
            raise InvalidParameterError("need one codelength per cluster")
        if abs(self.total_dl - math.fsum(self.per_cluster_dl)) > 1e-6:
            raise InvalidParameterError("total_dl must equal the per-cluster sum")

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster_id)


def description_length(sequences, k: int, depth: int, memory_size: int) -> float:
    """Description length (bits) of one cluster: shared-tree CTW codelength of
    its members plus a log2(memory_size) header; an empty cluster costs 0."""
    seqs = list(sequences)
    if not seqs:
        return 0.0
    if memory_size < 1:
        raise InvalidParameterError("memory_size must be >= 1")
    members = [sequence_pair_counts(k, depth, s) for s in seqs]
    return codelength_from_counts(k, depth, members) + math.log2(memory_size)


class _Workspace:
    """Cached per-sequence count tables plus cluster DL evaluation."""

    def __init__(self, memory: MemoryStore, k: int, depth: int):
        self.k = k
        self.depth = depth
        self.T = memory.T
        if self.T < 1:
            raise InvalidParameterError("memory must contain at least one sequence")
        self.header = math.log2(self.T)
        self.pairs = [sequence_pair_counts(k, depth, s) for s in memory.sequences]

    def cluster_dl(self, indices, extra=None) -> float:
        members = [self.pairs[int(i)] for i in indices]
        if extra is not None:
            members.append(extra)
        if not members:
            return 0.0
        return codelength_from_counts(self.k, self.depth, members) + self.header


def _state_from_assignment(ws: _Workspace, K: int, assignment: np.ndarray) -> ClusterState:
    dls = [ws.cluster_dl(np.flatnonzero(assignment == j + 1)) for j in range(K)]
    return ClusterState(K=K, assignment=assignment, per_cluster_dl=dls,
                        total_dl=math.fsum(dls))


def state_from_assignment(memory: MemoryStore, K: int, assignment,
                          k: int, depth: int) -> ClusterState:
    """Rebuild a ClusterState (with recomputed codelengths) from a stored
    assignment vector."""
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.size != memory.T:
        raise InvalidParameterError("assignment length must match the memory size")
    return _state_from_assignment(_Workspace(memory, k, depth), K, assignment)


def initial_partition(memory: MemoryStore, K: int, k: int, depth: int,
                      *, entropy_order: int = 1) -> ClusterState:
    """Entropy-quantile initialization: sort by order-1 empirical entropy
    (ties by index) and cut into K contiguous groups of near-equal size."""
    if K < 1:
        raise InvalidParameterError(f"K must be >= 1, got {K}")
    T = memory.T
    if T < K:
        raise InvalidParameterError(f"need at least K={K} sequences, got {T}")
    ents = [empirical_entropy(s, entropy_order, k) for s in memory.sequences]
    order = sorted(range(T), key=lambda i: (ents[i], i))
    assignment = np.empty(T, dtype=np.int64)
    for j in range(K):
        lo, hi = j * T // K, (j + 1) * T // K
        assignment[order[lo:hi]] = j + 1
    ws = _Workspace(memory, k, depth)
    return _state_from_assignment(ws, K, assignment)


def refine(memory: MemoryStore, state: ClusterState, k: int, depth: int,
           max_iters: int = 50) -> ClusterState:
    """Greedy swap refinement: full passes in index order, each sequence moved
    to the cluster that minimizes the total description length (strict
    improvement only). Stops on a pass with no move or after max_iters passes.
    """
    ws = _Workspace(memory, k, depth)
    K = state.K
    assignment = state.assignment.copy()
    members: list[list[int]] = [list(np.flatnonzero(assignment == j + 1)) for j in range(K)]
    dls = [ws.cluster_dl(m) for m in members]
    for _ in range(max_iters):
        moved = False
        for t in range(ws.T):
            i = int(assignment[t]) - 1
            rest = [s for s in members[i] if s != t]
            dl_i_without = ws.cluster_dl(rest)
            best_j, best_delta = i, 0.0
            for j in range(K):
                if j == i:
                    continue
                dl_j_with = ws.cluster_dl(members[j], extra=ws.pairs[t])
                delta = (dl_i_without - dls[i]) + (dl_j_with - dls[j])
                if delta < best_delta - _IMPROVEMENT_EPS:
                    best_j, best_delta = j, delta
            if best_j != i:
                dls[i] = dl_i_without
                members[i] = rest
                dls[best_j] = ws.cluster_dl(members[best_j], extra=ws.pairs[t])
                members[best_j] = members[best_j] + [t]
                assignment[t] = best_j + 1
                moved = True
        if not moved:
            break
    # recompute exactly so per-cluster values carry no incremental drift
    return _state_from_assignment(ws, K, assignment)


def classify(x, memory: MemoryStore, state: ClusterState, k: int, depth: int) -> int:
    """Cluster whose description length grows least when x joins it (1-based;
    ties broken by the smallest id)."""
    ws = _Workspace(memory, k, depth)
    x_pairs = sequence_pair_counts(k, depth, np.asarray(x, dtype=np.int64))
    best_id, best_cost = 1, math.inf
    for j in range(state.K):
        idx = state.members(j + 1)
        base = ws.cluster_dl(idx)
        cost = ws.cluster_dl(idx, extra=x_pairs) - base
        if cost < best_cost - 1e-12:
            best_id, best_cost = j + 1, cost
    return best_id
