"""Locally differentially private frequency estimation with consistency.

Frequency oracles (GRR, OLH), ten consistency post-processing estimators,
and a seeded Monte-Carlo harness for full-domain, set-value, and top-k
evaluation.
"""

from .core import DomainDistribution, gen_zipf, load_counts, make_rng, sample_users
from .oracles import (
    EstimateVector,
    NoiseModel,
    OlhReports,
    PerturbParams,
    SupportCounts,
    analytic_variance,
    estimate,
    grr_aggregate,
    grr_params,
    grr_perturb,
    olh_aggregate,
    olh_params,
    olh_perturb,
)
from .postprocess import (
    METHODS,
    CutConfig,
    PowerPrior,
    ProcessedEstimate,
    SolverResult,
    apply_method,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    FixedSetQuery,
    FullDomainQuery,
    SetValueQuery,
    TopKQuery,
    bias_variance,
    equivalent_n,
    mse_fixed_sets,
    mse_full,
    mse_set,
    mse_topk,
    run_experiment,
    run_once,
    select_method_synthetic,
)

__version__ = "0.1.0"
