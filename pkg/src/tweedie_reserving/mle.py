"""Maximum likelihood fitting and frequentist reserve uncertainty.

Fitting maximizes the triangle log-likelihood over (p, phi, exposure
groups) with the development pattern recovered in closed form at every
trial point; the optimizer is Nelder-Mead on transformed coordinates
(log for positive parameters, a logistic rescaling for p into its range)
with jittered restarts.  Parameter covariance comes from the inverse
observed information, estimated by central finite differences of the
full, non-profiled log-likelihood.

The reserve decomposition follows the delta method: process variance is
``phi * sum(mu^p)`` over the unobserved cells and estimation error is the
quadratic form of the reserve gradient with the parameter covariance.
The p = 1 (overdispersed Poisson) and p = 2 (gamma) boundary models are
fitted from the quasi-score equations, which remain valid there, with
dispersion estimated from Pearson residuals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from . import _kernels as _k
from .density import P_MAX, P_MIN
from .model import (CellData, ModelSpec, PriorBox, TweedieParams,
                    free_to_params, model_spec, prepare_cells,
                    profile_beta_grouped)
from .triangle import Triangle

__all__ = ["OptimizerSettings", "MleFit", "MsepReport", "fit_mle",
           "reserve_mle", "pearson_dispersion", "fit_boundary",
           "boundary_msep", "DISPERSION_MLE", "DISPERSION_PEARSON"]

DISPERSION_MLE = "MLE"
DISPERSION_PEARSON = "PEARSON"


@dataclass(frozen=True)
class OptimizerSettings:
    """Direct-search controls for :func:`fit_mle`."""

    max_evals: int = 100_000
    xatol: float = 1.0e-9
    fatol: float = 1.0e-10
    restarts: int = 3
    jitter: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class MsepReport:
    """Reserve point estimate with its prediction-error decomposition."""

    reserve: float
    process_variance: float
    estimation_error: float | None
    dispersion_source: str

    @property
    def msep(self) -> float | None:
        if self.estimation_error is None:
            return None
        return self.process_variance + self.estimation_error

    def sqrt_triplet(self) -> tuple[float, float | None, float | None]:
        ee = self.estimation_error
        return (math.sqrt(self.process_variance),
                None if ee is None else math.sqrt(ee),
                None if ee is None else math.sqrt(self.msep))


@dataclass(frozen=True)
class MleFit:
    """Fit result over a spec's free coordinates.

    ``covariance`` is indexed by the spec's free layout (p, phi, exposure
    groups, development groups); rows of coordinates that were held fixed
    during fitting are zero.  ``unit_estimation_error`` is only set by
    :func:`fit_boundary` and gives the estimation error at dispersion 1.
    """

    params: TweedieParams
    spec: ModelSpec
    log_lik: float
    covariance: np.ndarray | None
    converged: bool
    evaluations: int
    free_values: np.ndarray
    hessian_asymmetry: float | None
    p_fixed: float | None = None
    unit_estimation_error: float | None = None

    @property
    def free_names(self) -> tuple[str, ...]:
        return self.spec.free_names

    def stdev(self) -> np.ndarray | None:
        if self.covariance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


# ---------------------------------------------------------------------------
# Fast likelihood closure over prepared cells
# ---------------------------------------------------------------------------


def _make_loglik(cells: CellData):
    """Log-likelihood as a function of (p, phi, alpha_full, beta_full)."""

    def loglik(p: float, phi: float, alpha: np.ndarray, beta: np.ndarray) -> float:
        mu = alpha[cells.i_idx] * beta[cells.j_idx]
        gamma = (2.0 - p) / (p - 1.0)
        r0max = _k._max_r0(cells.logy_pos, phi, p)
        gtab = _k.build_lgamma_table(gamma, int(r0max * 1.3) + 64)
        while True:
            value, needed = _k.loglik_from_parts(
                cells.y, mu, cells.all_idx, cells.logy_pos, phi, p, gamma, gtab)
            if needed == 0:
                return value
            if needed < 0:
                return -math.inf
            gtab = _k.build_lgamma_table(gamma, needed)

    return loglik


def _profile_beta_values(t: Triangle, spec: ModelSpec, alpha: np.ndarray,
                         p: float, beta_floor: float) -> np.ndarray:
    beta = np.asarray(profile_beta_grouped(t, alpha, p, spec))
    return np.maximum(beta, beta_floor)


def _initial_alpha(t: Triangle) -> np.ndarray:
    """Exposure start values: row totals over the columns shared with row 0."""
    I = t.I
    alpha = np.ones(I + 1)
    for i in range(1, I + 1):
        ncols = I - i + 1
        num = sum(t.rows[i][:ncols])
        den = sum(t.rows[0][:ncols])
        alpha[i] = num / den if den > 0 and num > 0 else 1.0
    return alpha


def _expand_alpha(spec: ModelSpec, groups: np.ndarray) -> np.ndarray:
    alpha = np.ones(spec.I + 1)
    for i in range(spec.I + 1):
        g = spec.alpha_groups[i]
        if g >= 0:
            alpha[i] = groups[g]
    return alpha


def fit_mle(t: Triangle, spec: ModelSpec | None = None,
            box: PriorBox | None = None,
            opts: OptimizerSettings | None = None,
            p_fixed: float | None = None) -> MleFit:
    """Maximize the likelihood over (p, phi, exposures), profiling betas.

    ``p_fixed`` freezes the variance power (it must lie inside the density
    range; use :func:`fit_boundary` for p = 1 or 2).  The returned
    covariance is the inverse negated finite-difference Hessian of the
    full log-likelihood over all free coordinates at the optimum.
    """
    spec = spec if spec is not None else model_spec("M0", t.I)
    box = box if box is not None else PriorBox()
    opts = opts if opts is not None else OptimizerSettings()
    if p_fixed is not None and not (P_MIN <= p_fixed <= P_MAX):
        raise ValueError(f"p_fixed must lie in [{P_MIN}, {P_MAX}]")

    cells = prepare_cells(t, spec)
    loglik = _make_loglik(cells)
    p_lo = max(box.p_range[0], P_MIN)
    p_hi = min(box.p_range[1], P_MAX)
    beta_floor = box.beta_range[0]
    nag = spec.n_alpha_groups

    # Transformed search vector: [p-logit] (absent when fixed), log phi,
    # log alpha-groups.
    def unpack(u: np.ndarray) -> tuple[float, float, np.ndarray]:
        if p_fixed is None:
            p = p_lo + (p_hi - p_lo) / (1.0 + math.exp(-u[0]))
            rest = u[1:]
        else:
            p = p_fixed
            rest = u
        phi = math.exp(rest[0])
        groups = np.exp(rest[1:1 + nag])
        return p, phi, groups

    evaluations = 0

    def objective(u: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        p, phi, groups = unpack(u)
        alpha = _expand_alpha(spec, groups)
        beta = _profile_beta_values(t, spec, alpha, p, beta_floor)
        value = loglik(p, phi, alpha, beta)
        return -value if math.isfinite(value) else 1.0e60

    # Start point: exposures from row totals, p mid-range, Pearson-style phi.
    alpha0_full = _initial_alpha(t)
    groups0 = np.array([np.mean([alpha0_full[i] for i in spec.alpha_block(g)])
                        for g in range(nag)]) if nag else np.empty(0)
    p0 = 1.5 if p_fixed is None else p_fixed
    alpha0 = _expand_alpha(spec, groups0)
    beta0 = _profile_beta_values(t, spec, alpha0, p0, beta_floor)
    mu0 = np.asarray([alpha0[i] * beta0[j]
                      for i, j in zip(cells.i_idx, cells.j_idx)])
    resid = (cells.y - mu0) ** 2 / mu0 ** p0
    k0 = spec.n_alpha_groups + spec.n_beta_groups
    dof = max(cells.y.shape[0] - k0, 1)
    phi0 = max(float(np.sum(resid)) / dof, 1e-3)

    u0_parts = []
    if p_fixed is None:
        z = (p0 - p_lo) / (p_hi - p_lo)
        z = min(max(z, 1e-9), 1 - 1e-9)
        u0_parts.append(math.log(z / (1.0 - z)))
    u0_parts.append(math.log(phi0))
    u0_parts.extend(np.log(np.maximum(groups0, 1e-8)))
    u0 = np.asarray(u0_parts)

    rng = np.random.default_rng(opts.seed)
    starts = [u0] + [u0 + rng.normal(0.0, opts.jitter, size=u0.shape)
                     for _ in range(max(opts.restarts - 1, 0))]

    best = None
    nm_opts = {"xatol": opts.xatol, "fatol": opts.fatol,
               "maxfev": opts.max_evals, "adaptive": True}
    for s in starts:
        res = optimize.minimize(objective, s, method="Nelder-Mead",
                                options=nm_opts)
        if best is None or res.fun < best.fun:
            best = res
    # Refinement restart from the incumbent rebuilds the simplex there.
    res = optimize.minimize(objective, best.x, method="Nelder-Mead",
                            options=nm_opts)
    if res.fun < best.fun:
        best = res
    converged = bool(best.success or res.success)

    p_hat, phi_hat, groups_hat = unpack(best.x)
    alpha_hat = _expand_alpha(spec, groups_hat)
    beta_hat = _profile_beta_values(t, spec, alpha_hat, p_hat, beta_floor)
    params = free_to_params(
        np.concatenate(([p_hat, phi_hat], groups_hat,
                        [beta_hat[spec.beta_block(g)[0]]
                         for g in range(spec.n_beta_groups)])), spec)
    free_values = np.concatenate(
        ([p_hat, phi_hat], groups_hat,
         [beta_hat[spec.beta_block(g)[0]] for g in range(spec.n_beta_groups)]))
    log_lik = loglik(p_hat, phi_hat, alpha_hat, beta_hat)

    cov, asym = _observed_information_covariance(
        loglik, spec, free_values, skip_p=p_fixed is not None)

    return MleFit(params=params, spec=spec, log_lik=float(log_lik),
                  covariance=cov, converged=converged,
                  evaluations=evaluations, free_values=free_values,
                  hessian_asymmetry=asym, p_fixed=p_fixed)


def _observed_information_covariance(
        loglik, spec: ModelSpec, free_values: np.ndarray,
        skip_p: bool = False) -> tuple[np.ndarray | None, float | None]:
    """Inverse negated central-difference Hessian over free coordinates."""
    nfree = free_values.shape[0]
    idx = [k for k in range(nfree) if not (skip_p and k == 0)]
    n = len(idx)

    def f(vec: np.ndarray) -> float:
        p = vec[0]
        phi = vec[1]
        alpha = _expand_alpha(spec, vec[2:2 + spec.n_alpha_groups])
        beta = np.array([vec[2 + spec.n_alpha_groups + spec.beta_groups[j]]
                         for j in range(spec.I + 1)])
        return loglik(p, phi, alpha, beta)

    # Steps of 1e-5 * |theta| put the strongly correlated (p, phi) block at
    # the finite-difference noise floor; 1e-4 is stable on 10x10 triangles.
    h = np.maximum(1e-4 * np.abs(free_values), 1e-6)
    # Keep p +/- h inside the density range.
    if not skip_p:
        h[0] = min(h[0], (P_MAX - free_values[0]) / 2.0,
                   (free_values[0] - P_MIN) / 2.0)
        if h[0] <= 0:
            h[0] = 1e-7

    f0 = f(free_values)
    H = np.zeros((n, n))
    for a, ka in enumerate(idx):
        ea = np.zeros(nfree)
        ea[ka] = h[ka]
        fp = f(free_values + ea)
        fm = f(free_values - ea)
        H[a, a] = (fp - 2.0 * f0 + fm) / h[ka] ** 2
        for b in range(a + 1, n):
            kb = idx[b]
            eb = np.zeros(nfree)
            eb[kb] = h[kb]
            fpp = f(free_values + ea + eb)
            fpm = f(free_values + ea - eb)
            fmp = f(free_values - ea + eb)
            fmm = f(free_values - ea - eb)
            val = (fpp - fpm - fmp + fmm) / (4.0 * h[ka] * h[kb])
            H[a, b] = val
            H[b, a] = val
    asym = float(np.max(np.abs(H - H.T)) /
                 max(np.max(np.abs(H)), 1e-300))
    Hs = 0.5 * (H + H.T)
    info = -Hs
    try:
        cov_sub = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        warnings.warn("observed information is singular; covariance unavailable")
        return None, asym
    if not np.all(np.isfinite(cov_sub)):
        warnings.warn("observed information inversion failed; covariance "
                      "unavailable")
        return None, asym
    cov = np.zeros((nfree, nfree))
    for a, ka in enumerate(idx):
        for b, kb in enumerate(idx):
            cov[ka, kb] = cov_sub[a, b]
    return cov, asym


# ---------------------------------------------------------------------------
# Reserve decomposition
# ---------------------------------------------------------------------------


def _reserve_gradient(fit: MleFit) -> tuple[float, np.ndarray, float]:
    """(reserve, gradient over free coords, sum of mu^p) on the lower set."""
    spec = fit.spec
    params = fit.params
    I = spec.I
    lower = [(i, j) for i in range(I + 1) for j in range(I + 1 - i, I + 1)]
    grad = np.zeros(spec.free_param_count)
    reserve = 0.0
    pow_sum = 0.0
    for i, j in lower:
        ai = params.alpha[i]
        bj = params.beta[j]
        reserve += ai * bj
        pow_sum += (ai * bj) ** params.p
        ca = spec.alpha_coord(i)
        if ca >= 0:
            grad[ca] += bj
        grad[spec.beta_coord(j)] += ai
    return reserve, grad, pow_sum


def reserve_mle(fit: MleFit, phi: float | None = None,
                dispersion_source: str = DISPERSION_MLE) -> MsepReport:
    """Delta-method reserve report at the fitted parameters.

    ``phi`` overrides the dispersion used for the process variance (and,
    for boundary fits, scales the estimation error); by default the fitted
    dispersion is used.
    """
    reserve, grad, pow_sum = _reserve_gradient(fit)
    phi_use = fit.params.phi if phi is None else phi
    pv = phi_use * pow_sum
    if fit.unit_estimation_error is not None:
        ee = phi_use * fit.unit_estimation_error
    elif fit.covariance is not None:
        ee = float(grad @ fit.covariance @ grad)
    else:
        ee = None
    return MsepReport(reserve=float(reserve), process_variance=float(pv),
                      estimation_error=ee, dispersion_source=dispersion_source)


def pearson_dispersion(t: Triangle, params: TweedieParams,
                       spec: ModelSpec | None = None,
                       p: float | None = None) -> float:
    """Dispersion from squared Pearson residuals.

    The denominator is the cell count minus the number of estimated mean
    coordinates (exposure and development groups of ``spec``; saturated
    when omitted).
    """
    spec = spec if spec is not None else model_spec("M0", t.I)
    p_use = params.p if p is None else p
    k = spec.n_alpha_groups + spec.n_beta_groups
    n = t.n_cells
    if n <= k:
        raise ValueError(f"no degrees of freedom: {n} cells, {k} mean "
                         "parameters")
    total = 0.0
    for i in range(t.I + 1):
        for j in range(t.I + 1 - i):
            mu = params.alpha[i] * params.beta[j]
            total += (t.rows[i][j] - mu) ** 2 / mu ** p_use
    return total / (n - k)


# ---------------------------------------------------------------------------
# Boundary models (p = 1 overdispersed Poisson, p = 2 gamma)
# ---------------------------------------------------------------------------


def _quasi_loglik(t: Triangle, alpha: np.ndarray, beta: np.ndarray,
                  p_fixed: int) -> float:
    """Unit-dispersion quasi-log-likelihood at the boundary powers."""
    s = 0.0
    for i in range(t.I + 1):
        for j in range(t.I + 1 - i):
            y = t.rows[i][j]
            mu = alpha[i] * beta[j]
            if p_fixed == 1:
                s += y * math.log(mu) - mu
            else:
                s += -y / mu - math.log(mu)
    return s


def fit_boundary(t: Triangle, p_fixed: int,
                 tol: float = 1e-14, max_iter: int = 2000
                 ) -> tuple[MleFit, MsepReport]:
    """Saturated-model quasi-likelihood fit at p = 1 or p = 2.

    Exposures and development factors solve the quasi-score equations by
    alternating closed-form updates; at p = 1 the resulting reserve is the
    chain-ladder reserve.  The dispersion is the Pearson estimate, the
    parameter covariance is ``phi * inverse(unit quasi-information)``, and
    both the process variance and the estimation error are proportional
    to the dispersion.
    """
    if p_fixed not in (1, 2):
        raise ValueError("boundary fits support p_fixed = 1 or 2 only")
    spec = model_spec("M0", t.I)
    I = t.I
    q = float(p_fixed)
    alpha = np.ones(I + 1)
    beta = np.asarray(profile_beta_grouped(t, alpha, q, spec))
    col_rows = [np.arange(I - k + 1) for k in range(I + 1)]
    row_cols = [np.arange(I - i + 1) for i in range(I + 1)]
    y_col = [np.array([t.rows[i][k] for i in col_rows[k]]) for k in range(I + 1)]
    y_row = [np.array(t.rows[i]) for i in range(I + 1)]
    iters = 0
    for iters in range(1, max_iter + 1):
        alpha_new = alpha.copy()
        for i in range(1, I + 1):
            cols = row_cols[i]
            num = float(np.sum(y_row[i] * beta[cols] ** (1.0 - q)))
            den = float(np.sum(beta[cols] ** (2.0 - q)))
            alpha_new[i] = num / den
        beta_new = np.array([
            float(np.sum(y_col[k] * alpha_new[col_rows[k]] ** (1.0 - q)))
            / float(np.sum(alpha_new[col_rows[k]] ** (2.0 - q)))
            for k in range(I + 1)])
        delta = max(float(np.max(np.abs(alpha_new - alpha) / alpha)),
                    float(np.max(np.abs(beta_new - beta) /
                                 np.maximum(beta, 1e-300))))
        alpha, beta = alpha_new, beta_new
        if delta < tol:
            break
    converged = delta < tol if max_iter > 0 else False

    params = TweedieParams(p=q, phi=1.0, alpha=tuple(alpha), beta=tuple(beta))
    phi_p = pearson_dispersion(t, params, spec)
    params = replace(params, phi=phi_p)

    # Unit-dispersion information over the mean coordinates.
    nfree = spec.free_param_count
    free_values = np.concatenate(([q, phi_p], alpha[1:], beta))

    def f(vec: np.ndarray) -> float:
        a = np.concatenate(([1.0], vec[2:2 + I]))
        b = vec[2 + I:]
        return _quasi_loglik(t, a, b, p_fixed)

    idx = list(range(2, nfree))
    h = np.maximum(1e-5 * np.abs(free_values), 1e-7)
    n = len(idx)
    f0 = f(free_values)
    H = np.zeros((n, n))
    for a_pos, ka in enumerate(idx):
        ea = np.zeros(nfree)
        ea[ka] = h[ka]
        H[a_pos, a_pos] = (f(free_values + ea) - 2.0 * f0 +
                           f(free_values - ea)) / h[ka] ** 2
        for b_pos in range(a_pos + 1, n):
            kb = idx[b_pos]
            eb = np.zeros(nfree)
            eb[kb] = h[kb]
            val = (f(free_values + ea + eb) - f(free_values + ea - eb)
                   - f(free_values - ea + eb) + f(free_values - ea - eb)
                   ) / (4.0 * h[ka] * h[kb])
            H[a_pos, b_pos] = val
            H[b_pos, a_pos] = val
    cov_unit = np.linalg.inv(-0.5 * (H + H.T))
    cov = np.zeros((nfree, nfree))
    for a_pos, ka in enumerate(idx):
        for b_pos, kb in enumerate(idx):
            cov[ka, kb] = phi_p * cov_unit[a_pos, b_pos]

    fit = MleFit(params=params, spec=spec, log_lik=float(f0),
                 covariance=cov, converged=bool(converged),
                 evaluations=iters, free_values=free_values,
                 hessian_asymmetry=0.0, p_fixed=q)
    reserve, grad, _ = _reserve_gradient(fit)
    sub = grad[idx]
    unit_ee = float(sub @ cov_unit @ sub)
    fit = replace(fit, unit_estimation_error=unit_ee)
    report = reserve_mle(fit, phi=phi_p, dispersion_source=DISPERSION_PEARSON)
    return fit, report


def boundary_msep(fit: MleFit, phi: float) -> MsepReport:
    """Boundary reserve report rescaled to an alternative dispersion."""
    if fit.unit_estimation_error is None:
        raise ValueError("fit does not carry a unit estimation error; "
                         "only boundary fits support rescaling")
    return reserve_mle(fit, phi=phi, dispersion_source=DISPERSION_PEARSON)
