"""Random-walk Metropolis-Hastings within Gibbs over the posterior.

One sweep visits the free coordinates in a fixed order (p, phi, exposure
groups, development groups), proposing from a Gaussian truncated to the
prior box and accepting with the ratio that includes the truncated-kernel
correction.  Proposals therefore never leave the box and the flat prior
terms cancel in the ratio.

Chains are deterministic given their seed: all uniforms are drawn up
front from a PCG64 generator and consumed by a compiled sweep loop.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .model import (CellData, ModelSpec, PriorBox, TweedieParams,
                    free_to_params, log_prior_constant, params_to_free,
                    prepare_cells)
from .triangle import Triangle

__all__ = ["ProposalScales", "Chain", "PosteriorSummary", "BLOCK_LENGTH",
           "TARGET_ACCEPTANCE", "sample_truncated_gaussian", "gibbs_sweep",
           "pretune", "run_chain", "summarize", "log_acceptance_ratio",
           "block_standard_error", "write_chain_csv", "read_chain_csv"]

TARGET_ACCEPTANCE = 0.234
ACCEPTANCE_BAND = (0.15, 0.35)
BLOCK_LENGTH = 5000
DEFAULT_ITERATIONS = 100_000
DEFAULT_BURN_IN = 10_000


@dataclass(frozen=True)
class ProposalScales:
    """Per-coordinate random-walk standard deviations."""

    sigma: np.ndarray
    rates: np.ndarray | None = None
    in_band: bool | None = None
    batches: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if np.any(self.sigma <= 0):
            raise ValueError("proposal scales must be strictly positive")


@dataclass
class Chain:
    """Posterior samples over a spec's free coordinates.

    ``samples[t]`` is the state after sweep ``t`` (0-based); the first
    ``burn_in`` rows are discarded by the estimators.  ``loglik[t]`` is
    the data log-likelihood of that state (the posterior differs by the
    constant in-box log-prior).
    """

    spec: ModelSpec
    samples: np.ndarray
    loglik: np.ndarray | None
    burn_in: int
    accepts: np.ndarray
    attempts: np.ndarray
    seed: int | None
    scales: ProposalScales | None = None
    warn_count: int = 0
    frozen: np.ndarray | None = None
    log_ratios: np.ndarray | None = None

    def __post_init__(self):
        if self.burn_in >= len(self.samples):
            raise ValueError("burn-in must be smaller than the chain length")

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def retained(self) -> np.ndarray:
        return self.samples[self.burn_in:]

    @property
    def retained_loglik(self) -> np.ndarray | None:
        if self.loglik is None:
            return None
        return self.loglik[self.burn_in:]

    def acceptance_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.attempts > 0,
                            self.accepts / np.maximum(self.attempts, 1),
                            np.nan)

    def expand(self, rows: np.ndarray | None = None
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(p, phi, alpha, beta) arrays for the given sample rows.

        Defaults to the retained (post burn-in) samples.  ``alpha`` and
        ``beta`` have one column per index 0..I with ties expanded and
        the fixed exposure column equal to one.
        """
        s = self.retained if rows is None else rows
        spec = self.spec
        I = spec.I
        n = s.shape[0]
        alpha = np.ones((n, I + 1))
        for i in range(I + 1):
            c = spec.alpha_coord(i)
            if c >= 0:
                alpha[:, i] = s[:, c]
        beta = np.empty((n, I + 1))
        for j in range(I + 1):
            beta[:, j] = s[:, spec.beta_coord(j)]
        return s[:, 0], s[:, 1], alpha, beta

    def params_at(self, t: int) -> TweedieParams:
        return free_to_params(self.samples[t], self.spec)


@dataclass(frozen=True)
class PosteriorSummary:
    """Marginal posterior point estimates with numerical standard errors.

    ``nse_mmse``/``nse_stdev`` are blocking standard errors of the mean
    estimates (block means scatter divided by sqrt(blocks)).  The MAP is a
    single argmax over samples, so ``nse_map`` is the scatter of per-block
    argmax samples without that division: it is the sampling scale of one
    argmax draw, which in a 20-odd-dimensional posterior sits a sizable
    fraction of a posterior standard deviation away from the true mode.
    """

    names: tuple[str, ...]
    mmse: np.ndarray
    map_estimate: np.ndarray
    stdev: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    nse_mmse: np.ndarray
    nse_stdev: np.ndarray
    nse_map: np.ndarray
    n_blocks: int

    def to_json_dict(self) -> dict:
        out = {}
        for k, name in enumerate(self.names):
            out[name] = {
                "mmse": float(self.mmse[k]),
                "map": float(self.map_estimate[k]),
                "stdev": float(self.stdev[k]),
                "q05": float(self.q05[k]),
                "q95": float(self.q95[k]),
                "nse_mmse": float(self.nse_mmse[k]),
                "nse_stdev": float(self.nse_stdev[k]),
                "nse_map": float(self.nse_map[k]),
            }
        out["n_blocks"] = self.n_blocks
        return out


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def sample_truncated_gaussian(mean: float, sigma: float, a: float, b: float,
                              rng: np.random.Generator) -> float:
    """One draw from N(mean, sigma^2) truncated to (a, b), by inverse CDF."""
    if not (a < b):
        raise ValueError(f"need a < b, got ({a}, {b})")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return float(_k.truncnorm_ppf(rng.random(), mean, sigma, a, b))


def log_acceptance_ratio(t: Triangle, spec: ModelSpec, box: PriorBox,
                         state: TweedieParams, coord: int, proposal: float,
                         sigma: float) -> float:
    """Log acceptance ratio of a single coordinate move (reference path).

    Composed from the public likelihood/prior plus the truncated-kernel
    correction; the compiled sweep must agree with this to rounding.
    """
    from .model import log_likelihood, log_prior

    vec = params_to_free(state, spec)
    lo, hi = box.bounds(spec)
    vec_star = vec.copy()
    vec_star[coord] = proposal
    params_star = free_to_params(vec_star, spec)
    num = log_likelihood(t, params_star, spec) + log_prior(params_star, spec, box)
    den = log_likelihood(t, state, spec) + log_prior(state, spec, box)
    corr = (math.log(_k.truncnorm_mass(vec[coord], sigma, lo[coord], hi[coord]))
            - math.log(_k.truncnorm_mass(proposal, sigma, lo[coord], hi[coord])))
    return num - den + corr


def _run_core(cells: CellData, spec: ModelSpec, box: PriorBox,
              x0: np.ndarray, sigma: np.ndarray, active: np.ndarray,
              uniforms: np.ndarray):
    T = uniforms.shape[0]
    nfree = spec.free_param_count
    lo, hi = box.bounds(spec)
    samples = np.empty((T, nfree))
    loglik = np.empty(T)
    log_ratios = np.empty((T, nfree))
    accepts = np.zeros(nfree, dtype=np.int64)
    attempts = np.zeros(nfree, dtype=np.int64)
    warn = _k.run_chain_core(
        cells.y, cells.logy_pos, cells.pos_sel, cells.all_idx,
        cells.a_coord, cells.b_coord, cells.coord_cells, cells.coord_off,
        x0, lo, hi, sigma, active, uniforms,
        samples, loglik, log_ratios, accepts, attempts)
    if warn < 0:
        raise ArithmeticError("likelihood evaluation failed at the initial "
                              "state of the chain")
    return samples, loglik, log_ratios, accepts, attempts, int(warn)


def _validate_state(vec: np.ndarray, spec: ModelSpec, box: PriorBox,
                    active: np.ndarray | None = None) -> None:
    """Sampled coordinates must start strictly inside the box; frozen ones
    (e.g. a pinned variance power on a grid edge) are exempt."""
    lo, hi = box.bounds(spec)
    ok = (vec > lo) & (vec < hi)
    if active is not None:
        ok = ok | ~active
    if not np.all(ok):
        names = [spec.free_names[k] for k in np.where(~ok)[0]]
        raise ValueError(f"state outside the prior box at {names}")


def gibbs_sweep(state: TweedieParams, scales: ProposalScales, t: Triangle,
                spec: ModelSpec, box: PriorBox, rng: np.random.Generator,
                p_fixed: float | None = None
                ) -> tuple[TweedieParams, np.ndarray, np.ndarray]:
    """One deterministic-scan sweep; returns (state, accept flags, ratios)."""
    cells = prepare_cells(t, spec)
    x0 = params_to_free(state, spec)
    nfree = spec.free_param_count
    active = np.ones(nfree, dtype=np.bool_)
    if p_fixed is not None:
        x0[0] = p_fixed
        active[0] = False
    _validate_state(x0, spec, box, active)
    uniforms = rng.random((1, nfree, 2))
    samples, _, log_ratios, accepts, _, _ = _run_core(
        cells, spec, box, x0, scales.sigma, active, uniforms)
    return free_to_params(samples[0], spec), accepts.astype(bool), log_ratios[0]


def run_chain(t: Triangle, spec: ModelSpec, box: PriorBox,
              scales: ProposalScales, T: int = DEFAULT_ITERATIONS,
              T_b: int = DEFAULT_BURN_IN, seed: int = 0,
              init: TweedieParams | None = None,
              p_fixed: float | None = None,
              frozen: list[int] | None = None,
              keep_log_ratios: bool = False) -> Chain:
    """Run a full chain; deterministic given ``seed``.

    ``init`` defaults to the maximum likelihood point.  ``p_fixed``
    freezes the variance power for conditional-on-p analysis; ``frozen``
    pins further coordinates (by free index) at their initial values.
    """
    if T <= T_b:
        raise ValueError(f"need T > T_b, got T={T}, T_b={T_b}")
    if init is None:
        from .mle import fit_mle
        init = fit_mle(t, spec, box, p_fixed=p_fixed).params
    cells = prepare_cells(t, spec)
    x0 = params_to_free(init, spec)
    nfree = spec.free_param_count
    active = np.ones(nfree, dtype=np.bool_)
    if p_fixed is not None:
        x0[0] = p_fixed
        active[0] = False
    if frozen is not None:
        active[list(frozen)] = False
    _validate_state(x0, spec, box, active)
    if scales.sigma.shape[0] != nfree:
        raise ValueError("proposal scales do not match the free layout")
    rng = np.random.default_rng(seed)
    uniforms = rng.random((T, nfree, 2))
    samples, loglik, log_ratios, accepts, attempts, warn = _run_core(
        cells, spec, box, x0, scales.sigma, active, uniforms)
    if warn:
        warnings.warn(f"{warn} proposals rejected due to evaluation failures")
    return Chain(spec=spec, samples=samples, loglik=loglik, burn_in=T_b,
                 accepts=accepts, attempts=attempts, seed=seed, scales=scales,
                 warn_count=warn, frozen=~active,
                 log_ratios=log_ratios if keep_log_ratios else None)


def default_initial_scales(spec: ModelSpec, box: PriorBox) -> ProposalScales:
    """One tenth of each box width; a coarse pretune starting point."""
    lo, hi = box.bounds(spec)
    return ProposalScales(sigma=(hi - lo) / 10.0)


def pretune(t: Triangle, spec: ModelSpec, box: PriorBox,
            init: TweedieParams, rng: np.random.Generator,
            initial_scales: ProposalScales | None = None,
            p_fixed: float | None = None,
            frozen: list[int] | None = None,
            batch_size: int = 1000, max_batches: int = 50
            ) -> ProposalScales:
    """Batch-tune the proposal scales toward the 0.234 acceptance target.

    After each batch of sweeps every scale is multiplied by
    ``exp(rate - 0.234)`` clipped to [0.5, 2]; tuning stops when all
    acceptance rates lie in [0.15, 0.35].  If the band is not reached the
    best scales seen are returned with a warning.
    """
    cells = prepare_cells(t, spec)
    nfree = spec.free_param_count
    sigma = (initial_scales.sigma.copy() if initial_scales is not None
             else default_initial_scales(spec, box).sigma.copy())
    if sigma.shape[0] != nfree:
        raise ValueError("initial scales do not match the free layout")
    x = params_to_free(init, spec)
    active = np.ones(nfree, dtype=np.bool_)
    if p_fixed is not None:
        x[0] = p_fixed
        active[0] = False
    if frozen is not None:
        active[list(frozen)] = False
    _validate_state(x, spec, box, active)

    best_sigma = sigma.copy()
    best_rates = None
    best_score = math.inf
    lo_band, hi_band = ACCEPTANCE_BAND
    for batch in range(1, max_batches + 1):
        uniforms = rng.random((batch_size, nfree, 2))
        samples, _, _, accepts, attempts, _ = _run_core(
            cells, spec, box, x, sigma, active, uniforms)
        x = samples[-1].copy()
        rates = np.where(attempts > 0, accepts / np.maximum(attempts, 1), np.nan)
        act_rates = rates[active]
        score = float(np.max(np.abs(act_rates - TARGET_ACCEPTANCE)))
        if score < best_score:
            best_score = score
            best_sigma = sigma.copy()
            best_rates = rates.copy()
        if np.all((act_rates >= lo_band) & (act_rates <= hi_band)):
            return ProposalScales(sigma=sigma, rates=rates, in_band=True,
                                  batches=batch)
        factors = np.exp(rates - TARGET_ACCEPTANCE)
        factors = np.clip(np.where(np.isnan(factors), 1.0, factors), 0.5, 2.0)
        sigma = sigma * factors
    warnings.warn(f"pretuning did not reach the acceptance band in "
                  f"{max_batches} batches; returning the best scales seen")
    return ProposalScales(sigma=best_sigma, rates=best_rates, in_band=False,
                          batches=max_batches)


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


def empirical_quantile(draws: np.ndarray, q: float) -> float:
    """Lower empirical order statistic (no interpolation)."""
    if draws.size == 0:
        raise ValueError("empty draws")
    if not (0.0 < q < 1.0):
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    s = np.sort(draws)
    k = max(int(math.ceil(q * s.size)) - 1, 0)
    return float(s[k])


def block_standard_error(values: np.ndarray, estimator=np.mean,
                         block_length: int = BLOCK_LENGTH) -> tuple[float, int]:
    """Numerical SE of an estimate from means over consecutive blocks.

    Returns (se, n_blocks); complete blocks only.
    """
    n_blocks = values.shape[0] // block_length
    if n_blocks < 2:
        return float("nan"), n_blocks
    est = np.array([estimator(values[b * block_length:(b + 1) * block_length])
                    for b in range(n_blocks)])
    return float(np.std(est, ddof=1) / math.sqrt(n_blocks)), n_blocks


def summarize(chain: Chain, block_length: int = BLOCK_LENGTH) -> PosteriorSummary:
    """Posterior point estimates from the retained samples.

    The MAP is the stored sample attaining the highest unnormalized log
    posterior (equal to the highest likelihood under the flat in-box
    prior); numerical standard errors come from block means.
    """
    retained = chain.retained
    if retained.shape[0] < block_length:
        raise ValueError(
            f"chain too short to summarize: {retained.shape[0]} retained "
            f"samples, need at least {block_length}")
    if chain.loglik is None:
        raise ValueError("chain carries no likelihood values")
    nfree = retained.shape[1]
    mmse = retained.mean(axis=0)
    stdev = retained.std(axis=0, ddof=1)
    best = int(np.argmax(chain.retained_loglik))
    map_estimate = retained[best].copy()
    q05 = np.array([empirical_quantile(retained[:, k], 0.05)
                    for k in range(nfree)])
    q95 = np.array([empirical_quantile(retained[:, k], 0.95)
                    for k in range(nfree)])
    nse_mmse = np.empty(nfree)
    nse_stdev = np.empty(nfree)
    n_blocks = 0
    for k in range(nfree):
        nse_mmse[k], n_blocks = block_standard_error(
            retained[:, k], np.mean, block_length)
        nse_stdev[k], _ = block_standard_error(
            retained[:, k], lambda v: np.std(v, ddof=1), block_length)
    ll = chain.retained_loglik
    if n_blocks >= 2:
        block_maps = np.array([
            retained[b * block_length:(b + 1) * block_length][
                int(np.argmax(ll[b * block_length:(b + 1) * block_length]))]
            for b in range(n_blocks)])
        nse_map = block_maps.std(axis=0, ddof=1)
    else:
        nse_map = np.full(nfree, np.nan)
    return PosteriorSummary(names=chain.spec.free_names, mmse=mmse,
                            map_estimate=map_estimate, stdev=stdev,
                            q05=q05, q95=q95, nse_mmse=nse_mmse,
                            nse_stdev=nse_stdev, nse_map=nse_map,
                            n_blocks=n_blocks)


def posterior_correlation(chain: Chain, name_a: str, name_b: str) -> float:
    """Correlation of two free coordinates over the retained samples."""
    names = chain.spec.free_names
    ia, ib = names.index(name_a), names.index(name_b)
    r = chain.retained
    return float(np.corrcoef(r[:, ia], r[:, ib])[0, 1])


# ---------------------------------------------------------------------------
# Chain files
# ---------------------------------------------------------------------------


def write_chain_csv(chain: Chain, path, fmt: str = "%.17g") -> None:
    """Chain export: one row per stored iteration over the free coordinates."""
    names = chain.spec.free_names
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter," + ",".join(names) + "\n")
        for row_idx in range(chain.length):
            vals = ",".join(fmt % v for v in chain.samples[row_idx])
            fh.write(f"{row_idx},{vals}\n")


def read_chain_csv(path, spec: ModelSpec, burn_in: int,
                   seed: int | None = None) -> Chain:
    """Load an exported chain; likelihood values are not part of the format."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        expected = ["iter", *spec.free_names]
        if header != expected:
            raise ValueError(f"chain header {header} does not match the "
                             f"{spec.id} layout {expected}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    samples = data[:, 1:]
    nfree = spec.free_param_count
    return Chain(spec=spec, samples=samples, loglik=None, burn_in=burn_in,
                 accepts=np.zeros(nfree, dtype=np.int64),
                 attempts=np.zeros(nfree, dtype=np.int64), seed=seed)
