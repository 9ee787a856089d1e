"""Clustering-accelerated Bayesian optimization for layer-wise pruning budgets."""

from .acquisition import (
    AcquisitionConfig,
    SearchDomain,
    SobolStream,
    expected_improvement,
    maximize_acquisition,
    sobol_next,
)
from .backend import BACKEND
from .clustering import (
    ClusterAssignment,
    Dendrogram,
    build_dendrogram,
    cut,
    ward_distance,
)
from .controller import RunConfig, RunReport, derive_seed, run, should_rollback
from .environment import (
    Evaluation,
    ExternalEnvironment,
    SyntheticEnvironment,
    SyntheticEnvSpec,
    load_env_spec,
    project_feasible,
)
from .gp import (
    GaussianProcessModel,
    KernelConfig,
    TrialHistory,
    TrialRecord,
    fit,
    posterior,
)
from .layers import (
    FeatureMatrix,
    LayerDescriptor,
    NetworkDescriptor,
    feature_matrix,
    flops,
    flops_ratio,
    load_network,
)
from .projection import EliteBuffer, StagePlan, lift, scaled_domain, seed_history
from .resources import bundled_path

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig",
    "BACKEND",
    "ClusterAssignment",
    "Dendrogram",
    "EliteBuffer",
    "Evaluation",
    "ExternalEnvironment",
    "FeatureMatrix",
    "GaussianProcessModel",
    "KernelConfig",
    "LayerDescriptor",
    "NetworkDescriptor",
    "RunConfig",
    "RunReport",
    "SearchDomain",
    "SobolStream",
    "StagePlan",
    "SyntheticEnvSpec",
    "SyntheticEnvironment",
    "TrialHistory",
    "TrialRecord",
    "build_dendrogram",
    "bundled_path",
    "cut",
    "derive_seed",
    "expected_improvement",
    "feature_matrix",
    "fit",
    "flops",
    "flops_ratio",
    "lift",
    "load_env_spec",
    "load_network",
    "maximize_acquisition",
    "posterior",
    "project_feasible",
    "run",
    "scaled_domain",
    "seed_history",
    "should_rollback",
    "sobol_next",
    "ward_distance",
]
