"""Posterior model probabilities, DIC and likelihood-ratio p-values.

Model probabilities follow the product-space Monte Carlo estimator: with
one chain of common length per model and equiprobable model priors whose
cross-model terms cancel, the probability of model k is the average over
aligned iterations of the softmax of the per-model data log-likelihoods.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .mcmc import Chain
from .mle import MleFit
from .model import free_to_params, log_likelihood
from .triangle import Triangle

__all__ = ["ModelComparison", "congdon_probabilities", "dic", "lhr_pvalue",
           "chain_log_likelihoods", "comparison_csv"]


@dataclass(frozen=True)
class ModelComparison:
    """Per-model selection criteria, aligned by model name."""

    names: tuple[str, ...]
    posterior_probability: np.ndarray
    dic: np.ndarray
    lhr_pvalue: np.ndarray

    def as_rows(self) -> list[tuple[str, np.ndarray]]:
        return [("posterior_probability", self.posterior_probability),
                ("dic", self.dic),
                ("lhr_pvalue", self.lhr_pvalue)]


def chain_log_likelihoods(chain: Chain, t: Triangle) -> np.ndarray:
    """Retained per-iteration log-likelihoods, recomputed when not stored."""
    ll = chain.retained_loglik
    if ll is not None:
        return ll
    out = np.empty(chain.length - chain.burn_in)
    for r, row in enumerate(chain.retained):
        out[r] = log_likelihood_from_free(row, chain, t)
    return out


def log_likelihood_from_free(row: np.ndarray, chain: Chain, t: Triangle) -> float:
    params = free_to_params(row, chain.spec)
    return log_likelihood(t, params, chain.spec)


def congdon_probabilities(chains: list[Chain], t: Triangle) -> np.ndarray:
    """Posterior model probabilities from aligned per-model chains.

    All chains must share T and the burn-in so iterations pair up.  Each
    retained iteration contributes a max-shifted softmax over the models'
    log-likelihoods; probabilities are the average contribution.
    """
    if not chains:
        raise ValueError("at least one chain is required")
    lengths = {(c.length, c.burn_in) for c in chains}
    if len(lengths) != 1:
        raise ValueError(f"chains are not aligned: lengths/burn-ins {lengths}")
    ll = np.vstack([chain_log_likelihoods(c, t) for c in chains])
    shift = ll.max(axis=0, keepdims=True)
    w = np.exp(ll - shift)
    w /= w.sum(axis=0, keepdims=True)
    return w.mean(axis=1)


def dic(chain: Chain, t: Triangle) -> float:
    """Deviance information criterion: mean deviance plus p_D.

    ``D(theta) = -2 log L``;  ``p_D = mean(D) - D(posterior mean)``.  The
    posterior mean is evaluated even if it falls outside the prior box
    (possible with tight boxes), with a warning.
    """
    ll = chain_log_likelihoods(chain, t)
    d_bar = -2.0 * float(np.mean(ll))
    theta_bar = chain.retained.mean(axis=0)
    params_bar = free_to_params(theta_bar, chain.spec)
    d_at_mean = -2.0 * log_likelihood(t, params_bar, chain.spec)
    p_d = d_bar - d_at_mean
    return d_bar + p_d


def lhr_pvalue(full: MleFit, reduced: MleFit) -> float:
    """Likelihood-ratio p-value of a reduced model against the full one.

    Degrees of freedom count the mean coordinates only (p and phi appear
    in both models).  A reduced likelihood above the full one is clamped
    to statistic zero with a warning.
    """
    df = ((full.spec.n_alpha_groups + full.spec.n_beta_groups)
          - (reduced.spec.n_alpha_groups + reduced.spec.n_beta_groups))
    if df < 0:
        raise ValueError(f"{reduced.spec.id} is not nested in {full.spec.id}")
    stat = 2.0 * (full.log_lik - reduced.log_lik)
    if stat < 0.0:
        warnings.warn(
            f"reduced model {reduced.spec.id} has higher likelihood than "
            f"{full.spec.id}; nesting statistic clamped to 0")
        stat = 0.0
    if df == 0:
        return 1.0
    return float(min(max(stats.chi2.sf(stat, df), 0.0), 1.0))


def comparison_csv(comp: ModelComparison, fmt: str = "%.17g") -> str:
    lines = ["," + ",".join(comp.names)]
    for name, row in comp.as_rows():
        lines.append(name + "," + ",".join(fmt % v for v in row))
    return "\n".join(lines) + "\n"
