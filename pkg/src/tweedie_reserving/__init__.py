"""Claims reserving with Tweedie compound Poisson models.

Fits multiplicative run-off triangle models with variance function
``phi * mu**p``, p in (1, 2), by maximum likelihood and by random-walk
Metropolis-Hastings within Gibbs; quantifies reserve uncertainty
(process variance, estimation error, MSEP, VaR) and model uncertainty
(posterior model probabilities over a nested ladder, conditional-on-p
analysis).
"""

from .density import (CompoundPoissonParams, SeriesDiagnostics,
                      SeriesEvaluationError, TweediePoint,
                      from_compound_poisson, log_density, log_zero_mass,
                      sample, to_compound_poisson)
from .mcmc import (Chain, PosteriorSummary, ProposalScales, gibbs_sweep,
                   pretune, run_chain, sample_truncated_gaussian, summarize)
from .mle import (MleFit, MsepReport, OptimizerSettings, boundary_msep,
                  fit_boundary, fit_mle, pearson_dispersion, reserve_mle)
from .model import (MODEL_NAMES, ModelSpec, PriorBox, TweedieParams,
                    log_likelihood, log_prior, mean_matrix, model_spec,
                    profile_beta)
from .model_choice import (ModelComparison, congdon_probabilities, dic,
                           lhr_pvalue)
from .reserving import (ConditionalPoint, ReserveReport,
                        bayesian_decomposition, conditional_on_p,
                        predictive_outstanding, reserve_draws,
                        value_at_risk)
from .triangle import (Triangle, TriangleParseError, load_triangle,
                       lower_triangle_indices, triangle_to_csv,
                       upper_triangle_indices)

__version__ = "0.1.0"
