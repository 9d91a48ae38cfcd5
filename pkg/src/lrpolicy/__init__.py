"""Policy learning with locally robust welfare scores."""

from .data import ColumnMapping, Dataset, FoldAssignment, PairFoldAssignment, load_dataset, make_pair_folds, make_unit_folds
from .errors import ArgumentError, ConfigError, DataError, EstimationError, LRPolicyError, NumericError
from .learners import (ForestRegression, KernelRegression, KNNRegression, NuisanceFits, cross_fit, fit_gamma,
                       fit_phi, fit_propensity, make_learner)
from .policy import (PolicyReport, PolicyTree, ThresholdGrid, enumerate_trees, estimate_ate, estimate_welfare,
                     make_grid, optimize_policy, policy_report, score_diagnostics, welfare_se)
from .scores import (LinearScoreSet, PairScoreSet, WelfareSpec, build_scores, ipw_orthogonal_scores, ipw_scores,
                     linear_scores_additive, linear_scores_atkinson_iop, pair_scores_gini, pair_scores_iop_gini,
                     pair_scores_kendall)
from .simlab import (DgpSpec, RegretCurve, draw_sample, get_preset, oracle_fits, oracle_welfare,
                     orthogonality_probe, regret_experiment)
from .ustat import PairKernel, gini_index, hoeffding_estimate, iop_share, kendall_tau, u_statistic

__version__ = "0.1.0"
