"""Memory-assisted universal compression toolkit.

A k-ary context-tree-weighting compressor with three modes (no memory,
primed memory, clustered memory), an MDL clustering engine for the memorized
sequences, closed-form redundancy and memorization-gain bounds, and an
experiment harness that measures empirical gains against the bounds.
"""

from .bounds import (
    BoundQuery,
    FamilySpec,
    avg_minimax_redundancy,
    entropy_of_p,
    gain_lb_cm,
    gain_lb_k1,
    jeffreys_integral_log,
    overhead_curve,
    rhat1,
    rhat2,
    solve_delta,
    theorem1_tail,
    ucompm_gain_ub,
)
from .codec import CodeStream, decode, encode, ideal_codelength, memory_digest
from .ctw import ContextTree, batch_codelength, kt_symbol_prob
from .errors import (
    InvalidParameterError,
    MaucError,
    MemoryDesyncError,
    NoSolutionError,
    NumericalFailureError,
    StreamFormatError,
)
from .experiment import (
    ExperimentConfig,
    GainReport,
    TrialResult,
    emit_report,
    gain_quantile,
    run_experiment,
    run_trial,
)
from .mdl_cluster import ClusterState, classify, description_length, initial_partition, refine
from .source_model import (
    CompoundSource,
    MarkovModel,
    MemoryStore,
    empirical_entropy,
    entropy_rate,
    generate,
    kl_rate,
    mixture_kl_rate,
    mixture_kl_rate_exact,
    sample_compound,
    sample_jeffreys,
)

__version__ = "0.1.0"
