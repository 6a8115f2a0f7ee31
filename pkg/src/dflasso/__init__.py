"""De-biased Lasso inference for linear functionals with a degrees-of-freedom adjustment."""
from .exceptions import CovarianceError, DegenerateFitError, NonUniqueSolutionError
from .model import (BetaSpec, CovarianceSpec, RegressionProblem, TargetFunctional,
                    direction_canonical, direction_sgn_beta, generate_problem)
from .lasso import (LassoConfig, LassoFit, lambda_default, lambda_univ, lasso_cd,
                    q_constrained_lasso, scaled_lasso)
from .score import EstimatedScore, IdealScore, check_score_conditions, estimated_score, ideal_score
from .debias import (DebiasedEstimate, confidence_interval, debias_estimated_score, debias_known_sigma,
                     debias_plugin, debias_zz, pivot)

__version__ = "0.1.0"
