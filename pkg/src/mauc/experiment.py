"""Compound-source experiment harness: runs the no-memory / primed-memory /
clustered-memory / MDL-clustered schemes over randomized trials, pools
codelength ratios into quantile gains, and attaches the matching closed-form
bound columns.

Determinism contract: a report depends only on the config (including
base_seed), never on worker count or wall clock. Per-trial seeds come from a
counter-based splitter, trials are aggregated in index order, and no volatile
metadata (timings, hosts) enters emitted reports.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

from .bounds import BoundQuery, FamilySpec, entropy_of_p, gain_lb_cm, gain_lb_k1, ucompm_gain_ub
from .codec import MODE_UCOMP, MODE_UCOMPCM, MODE_UCOMPM, encode
from .ctw import codelength_from_counts, sequence_pair_counts
from .errors import InvalidParameterError
from .mdl_cluster import classify, initial_partition, refine
from .source_model import (
    CompoundSource,
    MemoryStore,
    entropy_rate,
    generate,
    kl_rate,
    mixture_kl_rate_exact,
    sample_compound,
    sample_jeffreys,
)

SCHEMES = ("ucomp", "ucompm", "ucompcm", "ucompmdl")
_MEMORY_SCHEMES = ("ucompm", "ucompcm", "ucompmdl")

CSV_COLUMNS = (
    "k", "order", "K", "n", "m_total", "T", "depth", "eps", "trials",
    "mean_len_ucomp", "mean_len_ucompm", "mean_len_ucompcm", "mean_len_ucompmdl",
    "g_M", "g_CM", "g_MDL", "g_ratio_mdl_cm",
    "bound_gain_lb_k1", "bound_gain_lb_cm", "bound_ucompm_ub",
    "cluster_accuracy", "base_seed",
)

_GAIN_KEY = {"ucompm": "g_M", "ucompcm": "g_CM", "ucompmdl": "g_MDL"}

# resampling cap for the source-separation guard
_MAX_GUARD_ATTEMPTS = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    """One grid point of the experiment sweep."""

    k: int = 2
    order: int = 1
    num_sources: int = 1
    p: tuple[float, ...] | None = None
    n: int = 1024
    num_memory: int = 8  # T, number of memorized sequences
    memory_length: int | None = None  # fixed n_j; None means n
    memory_length_range: tuple[int, int] | None = None  # uniform law instead
    depth: int | None = None  # context tree depth; None means max(order, 3)
    eps: float = 0.05
    trials: int = 100
    base_seed: int = 0
    schemes: tuple[str, ...] = ("ucomp", "ucompm", "ucompcm")
    quantile_mode: str = "pooled"  # or "per_source"
    use_payload_bits: bool = False
    min_kl_rate: float | None = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "schemes", self._normalized_schemes())
        if self.p is not None:
            object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        if self.memory_length_range is not None:
            lo, hi = self.memory_length_range
            object.__setattr__(self, "memory_length_range", (int(lo), int(hi)))
        if self.k < 2 or self.order < 0 or self.num_sources < 1:
            raise InvalidParameterError("bad k / order / num_sources")
        if self.n < 1 or self.num_memory < 0 or self.trials < 1:
            raise InvalidParameterError("bad n / num_memory / trials")
        if not 0.0 < self.eps < 1.0:
            raise InvalidParameterError(f"eps must be in (0,1), got {self.eps}")
        if self.p is not None and len(self.p) != self.num_sources:
            raise InvalidParameterError("p must have num_sources entries")
        if self.quantile_mode not in ("pooled", "per_source"):
            raise InvalidParameterError(f"unknown quantile_mode {self.quantile_mode!r}")
        if "ucompmdl" in self.schemes and self.num_memory < self.num_sources:
            raise InvalidParameterError("MDL clustering needs at least K memory sequences")
        if self.use_payload_bits and self.k > 256:
            raise InvalidParameterError("payload-bit accounting needs k <= 256")
        if self.workers < 1:
            raise InvalidParameterError("workers must be >= 1")

    def _normalized_schemes(self) -> tuple[str, ...]:
        wanted = {str(s).lower() for s in self.schemes}
        wanted.add("ucomp")  # the baseline every ratio needs
        bad = wanted - set(SCHEMES)
        if bad:
            raise InvalidParameterError(f"unknown schemes: {sorted(bad)}")
        return tuple(s for s in SCHEMES if s in wanted)

    @property
    def resolved_depth(self) -> int:
        return self.depth if self.depth is not None else max(self.order, 3)

    @property
    def p_vector(self) -> np.ndarray:
        if self.p is None:
            return np.full(self.num_sources, 1.0 / self.num_sources)
        return np.asarray(self.p, dtype=np.float64)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "K" in data:
            data["num_sources"] = data.pop("K")
        if "T" in data:
            data["num_memory"] = data.pop("T")
        known = set(cls.__dataclass_fields__)
        bad = set(data) - known
        if bad:
            raise InvalidParameterError(f"unknown config keys: {sorted(bad)}")
        for key in ("p", "schemes", "memory_length_range"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass
class TrialResult:
    """Outcome of one independent trial."""

    source_index: int
    codelengths: dict[str, float]
    q_ratios: dict[str, float]
    entropy_rate: float
    kl_rate: float
    memory_total: int
    cluster_accuracy: float | None
    classification_ok: bool | None


@dataclass
class GainReport:
    """Aggregate of one grid point, plus matching theoretical columns."""

    config: ExperimentConfig
    mean_codelengths: dict[str, float]
    gains: dict[str, float]
    gain_ratio_mdl_cm: float
    bound_gain_lb_k1: float
    bound_gain_lb_cm: float
    bound_ucompm_ub: float
    mean_entropy_rate: float
    mean_kl_rate: float
    memory_total: float
    cluster_accuracy: float
    classification_accuracy: float
    trial_results: list[TrialResult] = field(default_factory=list, repr=False)

    def csv_row(self) -> list[str]:
        c = self.config
        vals = {
            "k": c.k, "order": c.order, "K": c.num_sources, "n": c.n,
            "m_total": float(self.memory_total), "T": c.num_memory,
            "depth": c.resolved_depth, "eps": float(c.eps), "trials": c.trials,
            "mean_len_ucomp": self.mean_codelengths.get("ucomp", math.nan),
            "mean_len_ucompm": self.mean_codelengths.get("ucompm", math.nan),
            "mean_len_ucompcm": self.mean_codelengths.get("ucompcm", math.nan),
            "mean_len_ucompmdl": self.mean_codelengths.get("ucompmdl", math.nan),
            "g_M": self.gains.get("ucompm", math.nan),
            "g_CM": self.gains.get("ucompcm", math.nan),
            "g_MDL": self.gains.get("ucompmdl", math.nan),
            "g_ratio_mdl_cm": self.gain_ratio_mdl_cm,
            "bound_gain_lb_k1": self.bound_gain_lb_k1,
            "bound_gain_lb_cm": self.bound_gain_lb_cm,
            "bound_ucompm_ub": self.bound_ucompm_ub,
            "cluster_accuracy": self.cluster_accuracy,
            "base_seed": c.base_seed,
        }
        return [_format_value(vals[col]) for col in CSV_COLUMNS]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "results": {
                "mean_codelengths": self.mean_codelengths,
                "gains": self.gains,
                "gain_ratio_mdl_cm": self.gain_ratio_mdl_cm,
                "mean_entropy_rate": self.mean_entropy_rate,
                "mean_kl_rate": self.mean_kl_rate,
                "memory_total": self.memory_total,
                "cluster_accuracy": self.cluster_accuracy,
                "classification_accuracy": self.classification_accuracy,
            },
            "bounds": {
                "gain_lb_k1": self.bound_gain_lb_k1,
                "gain_lb_cm": self.bound_gain_lb_cm,
                "ucompm_gain_ub": self.bound_ucompm_ub,
            },
            "meta": {
                "base_seed": self.config.base_seed,
                "trials": self.config.trials,
                "quantile_mode": self.config.quantile_mode,
                "schemes": list(self.config.schemes),
            },
        }


def _format_value(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def gain_quantile(q_samples, eps: float) -> float:
    """Largest sample value z such that at least ceil((1-eps) N) samples are
    >= z (the empirical (1-eps)-probability gain)."""
    samples = np.sort(np.asarray(q_samples, dtype=np.float64))
    if samples.size == 0:
        raise InvalidParameterError("gain_quantile needs at least one sample")
    if not 0.0 < eps < 1.0:
        raise InvalidParameterError(f"eps must be in (0,1), got {eps}")
    need = int(math.ceil(Fraction(samples.size) * (1 - Fraction(eps))))
    return float(samples[samples.size - need])


def _sample_models(config: ExperimentConfig, rng) -> list:
    """Draw the K source models, resampling whole sets until the minimum
    pairwise KL rate clears the separation guard (when one is set)."""
    K = config.num_sources
    for _ in range(_MAX_GUARD_ATTEMPTS):
        models = [sample_jeffreys(config.k, config.order, rng) for _ in range(K)]
        if config.min_kl_rate is None or K == 1:
            return models
        sep = min(
            kl_rate(models[i], models[j])
            for i in range(K) for j in range(K) if i != j
        )
        if sep >= config.min_kl_rate:
            return models
    raise InvalidParameterError(
        f"could not draw {K} sources with min pairwise KL rate >= {config.min_kl_rate}"
    )


def _payload_bits(mode: str, x, mem_seqs, k: int, depth: int, cluster_id=None) -> float:
    stream = encode(mode, x, mem_seqs if mode != MODE_UCOMP else None,
                    k=k, depth=depth, cluster_id=cluster_id)
    return float(stream.payload_bits)


def run_trial(config: ExperimentConfig, trial_index: int) -> TrialResult:
    """One independent trial: fresh sources, fresh memory, fresh target
    sequence, codelengths for every requested scheme."""
    rng = np.random.default_rng(
        np.random.SeedSequence(config.base_seed, spawn_key=(trial_index,))
    )
    k, depth = config.k, config.resolved_depth
    models = _sample_models(config, rng)
    compound = CompoundSource(models, config.p_vector)

    if config.memory_length_range is not None:
        memory = sample_compound(compound, config.num_memory, rng,
                                 length_range=config.memory_length_range)
    else:
        length = config.memory_length if config.memory_length is not None else config.n
        memory = sample_compound(compound, config.num_memory, rng, length=length)

    z_t = int(rng.choice(config.num_sources, p=compound.p))
    x = generate(models[z_t], config.n, rng)

    x_counts = sequence_pair_counts(k, depth, x)
    mem_counts = [sequence_pair_counts(k, depth, s) for s in memory.sequences]

    def ideal_with(indices) -> float:
        subset = [mem_counts[i] for i in indices]
        base = codelength_from_counts(k, depth, subset)
        return codelength_from_counts(k, depth, subset + [x_counts]) - base

    codelengths: dict[str, float] = {}
    cluster_accuracy = None
    classification_ok = None
    all_idx = range(memory.T)
    true_idx = [i for i in all_idx if int(memory.labels[i]) == z_t] if memory.T else []

    if config.use_payload_bits:
        codelengths["ucomp"] = _payload_bits(MODE_UCOMP, x, None, k, depth)
    else:
        codelengths["ucomp"] = codelength_from_counts(k, depth, [x_counts])

    if "ucompm" in config.schemes:
        if config.use_payload_bits:
            codelengths["ucompm"] = _payload_bits(MODE_UCOMPM, x, memory.sequences, k, depth)
        else:
            codelengths["ucompm"] = ideal_with(list(all_idx))
    if "ucompcm" in config.schemes:
        if config.use_payload_bits:
            seqs = [memory.sequences[i] for i in true_idx]
            codelengths["ucompcm"] = _payload_bits(MODE_UCOMPCM, x, seqs, k, depth,
                                                   cluster_id=z_t)
        else:
            codelengths["ucompcm"] = ideal_with(true_idx)
    if "ucompmdl" in config.schemes:
        state = initial_partition(memory, config.num_sources, k, depth)
        state = refine(memory, state, k, depth)
        cid = classify(x, memory, state, k, depth)
        chosen = list(state.members(cid))
        if config.use_payload_bits:
            seqs = [memory.sequences[i] for i in chosen]
            codelengths["ucompmdl"] = _payload_bits(MODE_UCOMPCM, x, seqs, k, depth,
                                                    cluster_id=cid)
        else:
            codelengths["ucompmdl"] = ideal_with(chosen)
        contingency = np.zeros((config.num_sources, config.num_sources))
        for i in all_idx:
            contingency[int(state.assignment[i]) - 1, int(memory.labels[i])] += 1.0
        rows, cols = linear_sum_assignment(-contingency)
        cluster_accuracy = float(contingency[rows, cols].sum() / max(memory.T, 1))
        mapping = dict(zip(rows.tolist(), cols.tolist()))
        classification_ok = mapping.get(cid - 1) == z_t

    q_ratios = {s: codelengths["ucomp"] / codelengths[s]
                for s in _MEMORY_SCHEMES if s in codelengths}
    phi_rate = entropy_rate(models[z_t])
    if config.num_sources > 1 and k**depth <= 1 << 16:
        phi_kl = mixture_kl_rate_exact(models[z_t], compound, depth)
    else:
        phi_kl = 0.0
    return TrialResult(
        source_index=z_t,
        codelengths=codelengths,
        q_ratios=q_ratios,
        entropy_rate=phi_rate,
        kl_rate=phi_kl,
        memory_total=memory.total,
        cluster_accuracy=cluster_accuracy,
        classification_ok=classification_ok,
    )


def _trial_worker(args) -> TrialResult:
    config, index = args
    return run_trial(config, index)


def _scheme_gain(trials: list[TrialResult], scheme: str, config: ExperimentConfig) -> float:
    if config.quantile_mode == "pooled":
        samples = [t.q_ratios[scheme] for t in trials]
        return gain_quantile(samples, config.eps)
    by_source: dict[int, list[float]] = {}
    for t in trials:
        by_source.setdefault(t.source_index, []).append(t.q_ratios[scheme])
    total = sum(len(v) for v in by_source.values())
    return math.fsum(
        len(v) / total * gain_quantile(v, config.eps) for _, v in sorted(by_source.items())
    )


def run_experiment(config: ExperimentConfig) -> GainReport:
    """Run config.trials independent trials and aggregate them into a report."""
    args = [(config, i) for i in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            trials = list(pool.map(_trial_worker, args, chunksize=1))
    else:
        trials = [run_trial(config, i) for i in range(config.trials)]

    mean_codelengths = {
        s: math.fsum(t.codelengths[s] for t in trials) / len(trials)
        for s in SCHEMES if s in config.schemes
    }
    gains = {s: _scheme_gain(trials, s, config)
             for s in _MEMORY_SCHEMES if s in config.schemes}
    if "ucompmdl" in gains and "ucompcm" in gains:
        ratio = gains["ucompmdl"] / gains["ucompcm"]
    else:
        ratio = math.nan

    acc_vals = [t.cluster_accuracy for t in trials if t.cluster_accuracy is not None]
    cluster_accuracy = math.fsum(acc_vals) / len(acc_vals) if acc_vals else math.nan
    cls_vals = [t.classification_ok for t in trials if t.classification_ok is not None]
    classification_accuracy = (
        sum(1.0 for v in cls_vals if v) / len(cls_vals) if cls_vals else math.nan
    )

    mean_rate = math.fsum(t.entropy_rate for t in trials) / len(trials)
    mean_kl = math.fsum(t.kl_rate for t in trials) / len(trials)
    mean_m = math.fsum(t.memory_total for t in trials) / len(trials)

    family = FamilySpec(k=config.k, order=config.order)
    p = config.p_vector
    if mean_m > 0 and mean_rate > 0:
        query = BoundQuery(n=config.n, m=mean_m, entropy_rate=mean_rate, eps=config.eps,
                           p_z=float(np.sum(p * p)), H_p=entropy_of_p(p))
        lb_k1 = gain_lb_k1(query, family)
        lb_cm = gain_lb_cm(query, family)
    else:
        lb_k1 = lb_cm = math.nan
    ub_m = (ucompm_gain_ub(config.n, family, mean_rate, mean_kl).bound
            if mean_rate > 0 else math.nan)

    return GainReport(
        config=config,
        mean_codelengths=mean_codelengths,
        gains=gains,
        gain_ratio_mdl_cm=ratio,
        bound_gain_lb_k1=lb_k1,
        bound_gain_lb_cm=lb_cm,
        bound_ucompm_ub=ub_m,
        mean_entropy_rate=mean_rate,
        mean_kl_rate=mean_kl,
        memory_total=mean_m,
        cluster_accuracy=cluster_accuracy,
        classification_accuracy=classification_accuracy,
        trial_results=trials,
    )


def _atomic_write(path: str, data: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".mauc-tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def reports_to_csv(reports) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in reports:
        lines.append(",".join(r.csv_row()))
    return "\n".join(lines) + "\n"


def reports_to_json(reports) -> str:
    objs = [r.to_dict() for r in reports]
    payload = objs[0] if len(objs) == 1 else objs
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit_report(reports, path: str, fmt: str = "csv") -> None:
    """Write one or more reports to path as CSV or JSON (atomically)."""
    if isinstance(reports, GainReport):
        reports = [reports]
    reports = list(reports)
    if fmt == "csv":
        text = reports_to_csv(reports)
    elif fmt == "json":
        text = reports_to_json(reports)
    else:
        raise InvalidParameterError(f"unknown report format {fmt!r}")
    try:
        _atomic_write(path, text)
    except OSError as e:
        raise OSError(f"failed writing report to {path}: {e}") from e


def parse_csv_report(path: str) -> list[dict]:
    """Read a CSV report back into typed rows (ints where integral)."""
    int_cols = {"k", "order", "K", "n", "T", "depth", "trials", "base_seed"}
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append({c: (int(rec[c]) if c in int_cols else float(rec[c]))
                         for c in rec})
    return rows
