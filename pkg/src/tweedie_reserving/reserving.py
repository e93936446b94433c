"""Reserve analytics over posterior chains.

For each retained parameter sample the expected outstanding payment is
``R_tilde = sum(alpha_i * beta_j)`` over the unobserved cells.  The
decomposition reports

* ER  = posterior mean of R_tilde,
* PV  = posterior mean of ``sum(phi * mu^p)`` (average process variance),
* EE  = posterior variance of R_tilde (estimation error),

with MSEP = PV + EE, either averaged over the whole chain or conditional
on a fixed variance power.  The predictive distribution of the actual
outstanding payment R is simulated by drawing compound Poisson losses for
every unobserved cell at each retained sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mcmc import (BLOCK_LENGTH, Chain, ProposalScales, block_standard_error,
                   empirical_quantile, pretune, run_chain)
from .mle import MleFit, MsepReport, OptimizerSettings, fit_mle, reserve_mle
from .model import ModelSpec, PriorBox
from .triangle import Triangle

__all__ = ["ReserveReport", "ConditionalPoint", "VAR_LEVELS",
           "MODE_MODEL_AVERAGED", "reserve_draws", "process_variance_draws",
           "bayesian_decomposition", "predictive_outstanding",
           "value_at_risk", "conditional_on_p", "histogram_data"]

VAR_LEVELS = (0.75, 0.90, 0.95)
MODE_MODEL_AVERAGED = "MODEL_AVERAGED"


@dataclass(frozen=True)
class ReserveReport:
    """ER/PV/EE decomposition with VaR quantiles and numerical SEs."""

    er: float
    pv: float
    ee: float
    mode: str
    var_r_tilde: dict[float, float]
    var_r: dict[float, float] | None
    se: dict[str, float]

    @property
    def msep(self) -> float:
        return self.pv + self.ee

    def to_json_dict(self) -> dict:
        var: dict[str, dict[str, float]] = {
            "R_tilde": {f"{int(q * 100)}": v
                        for q, v in self.var_r_tilde.items()}}
        if self.var_r is not None:
            var["R"] = {f"{int(q * 100)}": v for q, v in self.var_r.items()}
        return {"er": self.er, "pv": self.pv, "ee": self.ee,
                "msep": self.msep, "var": var, "mode": self.mode,
                "se": dict(self.se)}


@dataclass(frozen=True)
class ConditionalPoint:
    """Reserve quantities at one fixed variance power."""

    p: float
    bayes: ReserveReport
    mle: MsepReport
    r_tilde_quartiles: tuple[float, float, float]


def _lower_cells(spec: ModelSpec) -> list[tuple[int, int]]:
    I = spec.I
    return [(i, j) for i in range(I + 1) for j in range(I + 1 - i, I + 1)]


def reserve_draws(chain: Chain) -> np.ndarray:
    """Expected outstanding payment per retained sample."""
    _, _, alpha, beta = chain.expand()
    total = np.zeros(alpha.shape[0])
    for i, j in _lower_cells(chain.spec):
        total += alpha[:, i] * beta[:, j]
    return total


def process_variance_draws(chain: Chain) -> np.ndarray:
    """Per-sample process variance sum(phi * mu^p) over unobserved cells."""
    p, phi, alpha, beta = chain.expand()
    total = np.zeros(alpha.shape[0])
    for i, j in _lower_cells(chain.spec):
        total += (alpha[:, i] * beta[:, j]) ** p
    return phi * total


def value_at_risk(draws: np.ndarray, q: float,
                  block_length: int = BLOCK_LENGTH) -> tuple[float, float]:
    """Lower order-statistic VaR with a blocking numerical SE."""
    draws = np.asarray(draws)
    if draws.size == 0:
        raise ValueError("empty draws")
    var = empirical_quantile(draws, q)
    se, _ = block_standard_error(draws, lambda v: empirical_quantile(v, q),
                                 block_length)
    return var, se


def bayesian_decomposition(chain: Chain,
                           predictive: np.ndarray | None = None,
                           mode: str = MODE_MODEL_AVERAGED,
                           block_length: int = BLOCK_LENGTH) -> ReserveReport:
    """ER/PV/EE from the retained samples, with VaR of the reserve draws.

    ``predictive`` optionally supplies simulated outstanding-payment draws
    (see :func:`predictive_outstanding`) to add VaR of R.
    """
    r_tilde = reserve_draws(chain)
    pv_draws = process_variance_draws(chain)
    er = float(np.mean(r_tilde))
    pv = float(np.mean(pv_draws))
    ee = float(np.var(r_tilde, ddof=1))
    se: dict[str, float] = {}
    se["er"], _ = block_standard_error(r_tilde, np.mean, block_length)
    se["pv"], _ = block_standard_error(pv_draws, np.mean, block_length)
    se["ee"], _ = block_standard_error(
        r_tilde, lambda v: np.var(v, ddof=1), block_length)
    var_rt: dict[float, float] = {}
    for q in VAR_LEVELS:
        var_rt[q], se_q = value_at_risk(r_tilde, q, block_length)
        se[f"var_r_tilde_{int(q * 100)}"] = se_q
    var_r = None
    if predictive is not None:
        var_r = {}
        for q in VAR_LEVELS:
            var_r[q], se_q = value_at_risk(predictive, q, block_length)
            se[f"var_r_{int(q * 100)}"] = se_q
    return ReserveReport(er=er, pv=pv, ee=ee, mode=mode,
                         var_r_tilde=var_rt, var_r=var_r, se=se)


def predictive_outstanding(chain: Chain, rng: np.random.Generator) -> np.ndarray:
    """Simulated outstanding payment per retained sample.

    Every unobserved cell is converted to its frequency/severity form and
    a compound Poisson loss is drawn: N ~ Poisson(lambda) and, when
    N > 0, a gamma variate with shape N*gamma at the severity scale.  The
    draws carry process, parameter and within-family model uncertainty.
    """
    p, phi, alpha, beta = chain.expand()
    gamma_shape = (2.0 - p) / (p - 1.0)
    total = np.zeros(alpha.shape[0])
    for i, j in _lower_cells(chain.spec):
        mu = alpha[:, i] * beta[:, j]
        lam = mu ** (2.0 - p) / (phi * (2.0 - p))
        tau = mu / lam
        scale = tau / gamma_shape
        n = rng.poisson(lam)
        mask = n > 0
        if np.any(mask):
            total[mask] += rng.gamma(n[mask] * gamma_shape[mask], scale[mask])
    return total


def conditional_on_p(t: Triangle, spec: ModelSpec, box: PriorBox,
                     p_grid, scales: ProposalScales | None = None,
                     T: int = 100_000, T_b: int = 10_000, seed: int = 0,
                     opts: OptimizerSettings | None = None,
                     mle_fit: MleFit | None = None
                     ) -> list[ConditionalPoint]:
    """Reserve quantities on a grid of fixed variance powers.

    For each grid point the sampler runs over the remaining coordinates
    (seeded per point) and the profile MLE is refitted at that power with
    its own dispersion estimate.  A failure at one grid point propagates
    only after the other points complete.
    """
    points: list[ConditionalPoint] = []
    errors: list[tuple[float, Exception]] = []
    if mle_fit is None:
        mle_fit = fit_mle(t, spec, box, opts)
    for gi, p0 in enumerate(p_grid):
        try:
            fit_p = fit_mle(t, spec, box, opts, p_fixed=float(p0))
            rep_p = reserve_mle(fit_p)
            sc = scales
            if sc is None:
                sd = fit_p.stdev()
                base = np.maximum(2.4 * sd, 1e-3) if sd is not None else None
                rng = np.random.default_rng(seed + 1000 + gi)
                sc = pretune(t, spec, box, fit_p.params, rng,
                             initial_scales=None if base is None
                             else ProposalScales(sigma=base),
                             p_fixed=float(p0))
            chain = run_chain(t, spec, box, sc, T=T, T_b=T_b,
                              seed=seed + gi, init=fit_p.params,
                              p_fixed=float(p0))
            bayes = bayesian_decomposition(chain, mode=f"CONDITIONAL({p0})")
            rt = reserve_draws(chain)
            quart = (empirical_quantile(rt, 0.25),
                     empirical_quantile(rt, 0.50),
                     empirical_quantile(rt, 0.75))
            points.append(ConditionalPoint(p=float(p0), bayes=bayes,
                                           mle=rep_p,
                                           r_tilde_quartiles=quart))
        except Exception as exc:  # isolate per-point failures
            errors.append((float(p0), exc))
    if errors:
        summary = "; ".join(f"p={p0}: {exc}" for p0, exc in errors)
        raise RuntimeError(f"conditional analysis failed at grid points "
                           f"{summary}") from errors[0][1]
    return points


def histogram_data(draws: np.ndarray) -> list[tuple[float, float, int]]:
    """(bin_left, bin_right, count) rows with Freedman-Diaconis bin width."""
    draws = np.asarray(draws, dtype=float)
    if draws.size == 0:
        raise ValueError("empty draws")
    q75 = np.quantile(draws, 0.75)
    q25 = np.quantile(draws, 0.25)
    iqr = q75 - q25
    if iqr <= 0 or draws.size < 2:
        edges = np.array([draws.min(), draws.max() + 1.0])
    else:
        width = 2.0 * iqr / draws.size ** (1.0 / 3.0)
        nbins = max(int(math.ceil((draws.max() - draws.min()) / width)), 1)
        edges = np.linspace(draws.min(), draws.max(), nbins + 1)
    counts, edges = np.histogram(draws, bins=edges)
    return [(float(edges[k]), float(edges[k + 1]), int(counts[k]))
            for k in range(len(counts))]
