"""Sparse model-based clustering of three-way data.

A library and CLI for clustering samples of p x q matrices with penalized
mixtures of matrix normal distributions: group-lasso shrinkage on mean
rows (variable selection across occasions), entrywise-lasso means as an
alternative, weighted graphical-lasso shrinkage on row and column
precision matrices, modified-BIC model selection, and a simulation
benchmark harness.
"""

__version__ = "0.1.0"

from .data import FORMATS, ThreeWayData, load_three_way, preprocess, save_three_way
from .em import (FitResult, MixtureParams, Responsibilities, classify, e_step,
                 fit, initialize, m_step, normalize_identifiability,
                 penalized_loglik, penalty_value, q_function)
from .errors import (ConvergenceError, DataError, DegenerateClusterError,
                     NotPositiveDefiniteError, TrimixError)
from .glasso import GlassoProblem, glasso_objective, glasso_solve, kkt_residual
from .matnorm import (SpdMatrix, logdet_pd, matnorm_logdensity,
                      matnorm_logdensity_many, matnorm_sample)
from .mean_group import (MeanUpdateProblem, grad_f, group_certificate,
                         mean_objective, prox_row, update_mean_group)
from .mean_lasso import (LassoMeanProblem, coordinate_update, lasso_certificate,
                         lasso_objective, shrink_to_zero_test, update_mean_lasso)
from .penalties import PENALTY_KINDS, PenaltyConfig
from .selection import (GridCell, GridSearchResult, bic, count_nonzero,
                        default_lambda_grids, grid_search, write_grid_csv)
from .simulate import (METHODS, SCENARIOS, ExperimentReport, ReplicationRecord,
                       ScenarioSpec, ari, confusion_matrix, f1_zero_rows,
                       gen_block_precision, gen_er_precision, gen_true_means,
                       match_labels, run_experiment, simulate_dataset,
                       write_report_csv)
