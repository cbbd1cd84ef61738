"""Transferability estimation for ensembles of pre-trained models.

Scores candidate ensembles without fine-tuning by combining per-model optimal
transport terms (domain and task difference) with an inter-model cohesion
term, and selects ensembles greedily under a cardinality budget.
"""

from .data_io import (
    LabelVector,
    ModelRecord,
    PoolManifest,
    PredictionVector,
    RankingRecord,
    TEConfig,
    load_pool,
    read_config,
    read_scores,
    stratified_subsample,
    write_config,
    write_scores,
)
from .errors import ComputationError, OsbornError, ValidationError
from .evaluation import (
    CorrelationReport,
    ensemble_accuracy,
    evaluate,
    kendall_tau,
    pearson,
    weighted_kendall_tau,
)
from .metrics import (
    JointLabelDistribution,
    PairwiseCache,
    ScoreBreakdown,
    build_pairwise_cache,
    cohesion_pair,
    joint_from_coupling,
    osborn_score,
    read_cache,
    standardize_terms,
    w_cohesion,
    w_domain,
    w_task,
    write_cache,
)
from .ot_core import Coupling, MarginalWeights, cost_matrix, exact_ot, sinkhorn, \
    sinkhorn_frobenius
from .selection import (
    EnsembleCandidate,
    SelectionTrace,
    exhaustive_select,
    greedy_select,
    marginal_gain,
    score_all,
)
from .synth import SynthSpec, build_pool, generate, proxy_accuracy, read_synth_spec

__version__ = "0.1.0"

__all__ = [
    "ComputationError",
    "CorrelationReport",
    "Coupling",
    "EnsembleCandidate",
    "JointLabelDistribution",
    "LabelVector",
    "MarginalWeights",
    "ModelRecord",
    "OsbornError",
    "PairwiseCache",
    "PoolManifest",
    "PredictionVector",
    "RankingRecord",
    "ScoreBreakdown",
    "SelectionTrace",
    "SynthSpec",
    "TEConfig",
    "ValidationError",
    "build_pairwise_cache",
    "build_pool",
    "cohesion_pair",
    "cost_matrix",
    "ensemble_accuracy",
    "evaluate",
    "exact_ot",
    "exhaustive_select",
    "generate",
    "greedy_select",
    "joint_from_coupling",
    "kendall_tau",
    "load_pool",
    "marginal_gain",
    "osborn_score",
    "pearson",
    "proxy_accuracy",
    "read_cache",
    "read_config",
    "read_scores",
    "read_synth_spec",
    "score_all",
    "sinkhorn",
    "sinkhorn_frobenius",
    "standardize_terms",
    "stratified_subsample",
    "w_cohesion",
    "w_domain",
    "w_task",
    "weighted_kendall_tau",
    "write_cache",
    "write_config",
    "write_scores",
]
