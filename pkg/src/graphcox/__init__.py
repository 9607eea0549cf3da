"""Cox proportional-hazards regression with a graph-structured latent-group
penalty, classical penalised baselines, and a simulation benchmark."""

__version__ = "0.1.0"

from .graph import (
    Community,
    ErdosRenyi,
    GraphError,
    PredictorGraph,
    Ring,
    generate_graph,
    graph_from_data,
    read_edge_list,
    write_edge_list,
)
from .metrics import MetricError, MetricReport, c_index, c_index_pairwise, prediction_errors
from .model_selection import CvPlan, CvResult, cross_validate, make_folds, tune_and_fit
from .penalties import (
    DuplicatedDesign,
    collapse,
    duplicate_design,
    graph_norm,
    group_soft_threshold,
    make_penalty,
    node_weights,
    penalty_prox,
)
from .simulation import (
    StudySpec,
    build_precision,
    generate_replication,
    sample_predictors,
    simulate_survival,
    true_coefficients,
)
from .solver import (
    FitConfig,
    FitResult,
    fit_cox_newton,
    fit_graph_cox,
    fit_penalized_cox,
    lambda_max,
)
from .survival import (
    DataError,
    SurvivalDataset,
    negative_partial_log_likelihood,
    partial_gradient,
    partial_hessian,
    read_csv,
    write_csv,
)
