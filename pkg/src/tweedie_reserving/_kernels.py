"""Compiled numerical kernels.

Everything here is numba-jitted and operates on flat float64 arrays; the
public modules wrap these functions with validated types.  Two code paths
evaluate the series normalizing constant of the compound Poisson density:

* ``series_logc_scalar`` sums one cell with exact log-gamma calls per term
  and returns truncation diagnostics (the reference path).
* ``series_logc_cells`` sums many cells sharing (phi, p) against a
  precomputed table of ``lgamma(1+r) + lgamma(gamma*r)`` values, which is
  what makes a 10^5-sweep chain affordable: the table depends on p only,
  and mean updates never touch the series at all because the constant is
  independent of mu.
"""

import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)

# Hard cap on the series index; reaching it signals an evaluation failure.
SERIES_INDEX_CAP = 1_000_000

STATUS_OK = 0
STATUS_INDEX_OVERFLOW = 1


# ---------------------------------------------------------------------------
# Gaussian helpers
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def norm_cdf(x):
    return 0.5 * math.erfc(-x / SQRT2)


@njit(cache=True, nogil=True)
def norm_sf(x):
    return 0.5 * math.erfc(x / SQRT2)


@njit(cache=True, nogil=True)
def norm_ppf(p):
    """Inverse standard normal CDF (Wichura's PPND16 rational fits)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    if r <= 0.0:
        return -math.inf if q < 0.0 else math.inf
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    if q < 0.0:
        val = -val
    return val


@njit(cache=True, nogil=True)
def truncnorm_mass(mean, sigma, a, b):
    """P[a < X < b] for X ~ N(mean, sigma^2), evaluated tail-stably."""
    za = (a - mean) / sigma
    zb = (b - mean) / sigma
    if za >= 0.0:
        return norm_sf(za) - norm_sf(zb)
    if zb <= 0.0:
        return norm_cdf(zb) - norm_cdf(za)
    return norm_cdf(zb) - norm_cdf(za)


@njit(cache=True, nogil=True)
def truncnorm_ppf(u, mean, sigma, a, b):
    """Quantile u of N(mean, sigma^2) truncated to (a, b).

    The interpolation runs in whichever tail representation avoids
    cancellation; the result is forced strictly inside (a, b).
    """
    za = (a - mean) / sigma
    zb = (b - mean) / sigma
    if za >= 0.0:
        pa = norm_sf(za)
        pb = norm_sf(zb)
        z = -norm_ppf(pa + u * (pb - pa))
    else:
        pa = norm_cdf(za)
        pb = norm_cdf(zb)
        z = norm_ppf(pa + u * (pb - pa))
    x = mean + sigma * z
    if x <= a:
        x = np.nextafter(a, b)
    elif x >= b:
        x = np.nextafter(b, a)
    return x


# ---------------------------------------------------------------------------
# Series normalizing constant
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _log_w(r, gamma, logz):
    return r * logz - math.lgamma(r + 1.0) - math.lgamma(gamma * r)


@njit(cache=True, nogil=True)
def series_logc_scalar(y, phi, p):
    """Adaptive bilateral summation of the series constant for one cell.

    Returns (log_c, r_peak_estimate, r_lower, r_upper, status).  Terms are
    added on either side of the estimated peak until they fall below
    exp(-37) of the peak term, then combined in log scale.
    """
    gamma = (2.0 - p) / (p - 1.0)
    logz = (gamma * math.log(y) - (gamma + 1.0) * math.log(phi)
            - gamma * math.log(p - 1.0) - math.log(2.0 - p))
    r0 = y ** (2.0 - p) / ((2.0 - p) * phi)
    rm = int(round(r0))
    if rm < 1:
        rm = 1
    lw_ref = _log_w(float(rm), gamma, logz)
    thresh = lw_ref - 37.0
    rl = rm
    while rl > 1 and _log_w(float(rl - 1), gamma, logz) > thresh:
        rl -= 1
    ru = rm
    while _log_w(float(ru + 1), gamma, logz) > thresh:
        ru += 1
        if ru >= SERIES_INDEX_CAP:
            return (np.nan, r0, rl, ru, STATUS_INDEX_OVERFLOW)
    # Kahan-compensated sum of the shifted exponentials.
    s = 0.0
    comp = 0.0
    for r in range(rl, ru + 1):
        term = math.exp(_log_w(float(r), gamma, logz) - lw_ref)
        yv = term - comp
        tv = s + yv
        comp = (tv - s) - yv
        s = tv
    log_c = -math.log(y) + lw_ref + math.log(s)
    return (log_c, r0, rl, ru, STATUS_OK)


@njit(cache=True, nogil=True)
def build_lgamma_table(gamma, rcap):
    """Table g[r] = lgamma(1+r) + lgamma(gamma*r) for r = 1..rcap."""
    out = np.empty(rcap + 1)
    out[0] = 0.0
    for r in range(1, rcap + 1):
        rf = float(r)
        out[r] = math.lgamma(rf + 1.0) + math.lgamma(gamma * rf)
    return out


@njit(cache=True, nogil=True)
def series_logc_cells(logy, phi, p, gamma, gtab):
    """Sum of log c(y; phi, p) over cells sharing (phi, p).

    ``gtab`` must be a table from :func:`build_lgamma_table` for this gamma.
    Returns (total, needed): ``needed`` is 0 on success, the required table
    size if the table is too small, or -1 when the series index cap is hit.
    """
    cap = gtab.shape[0] - 1
    zbase = (-(gamma + 1.0) * math.log(phi) - gamma * math.log(p - 1.0)
             - math.log(2.0 - p))
    inv_scale = 1.0 / ((2.0 - p) * phi)
    total = 0.0
    comp = 0.0
    for c in range(logy.shape[0]):
        ly = logy[c]
        logz = gamma * ly + zbase
        r0 = math.exp((2.0 - p) * ly) * inv_scale
        if r0 > float(SERIES_INDEX_CAP):
            return (np.nan, -1)
        rm = int(round(r0))
        if rm < 1:
            rm = 1
        if rm + 1 > cap:
            return (np.nan, int(rm * 1.5) + 64)
        lw_ref = rm * logz - gtab[rm]
        thresh = lw_ref - 37.0
        rl = rm
        while rl > 1 and (rl - 1) * logz - gtab[rl - 1] > thresh:
            rl -= 1
        ru = rm
        while True:
            nxt = ru + 1
            if nxt > cap:
                if nxt >= SERIES_INDEX_CAP:
                    return (np.nan, -1)
                return (np.nan, int(cap * 1.6) + 64)
            if nxt * logz - gtab[nxt] > thresh:
                ru = nxt
            else:
                break
        s = 0.0
        scomp = 0.0
        for r in range(rl, ru + 1):
            term = math.exp(r * logz - gtab[r] - lw_ref)
            yv = term - scomp
            tv = s + yv
            scomp = (tv - s) - yv
            s = tv
        cell = -ly + lw_ref + math.log(s)
        yv = cell - comp
        tv = total + yv
        comp = (tv - total) - yv
        total = tv
    return (total, 0)


# ---------------------------------------------------------------------------
# Likelihood pieces
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def exponent_sum(y, mu, idx, phi, p):
    """Kahan sum of (y*mu^(1-p)/(1-p) - mu^(2-p)/(2-p))/phi over idx cells.

    Handles y = 0 cells exactly (they contribute the zero-mass exponent).
    """
    one_m_p = 1.0 - p
    two_m_p = 2.0 - p
    s = 0.0
    comp = 0.0
    for k in range(idx.shape[0]):
        c = idx[k]
        m = mu[c]
        term = (y[c] * m ** one_m_p / one_m_p - m ** two_m_p / two_m_p) / phi
        yv = term - comp
        tv = s + yv
        comp = (tv - s) - yv
        s = tv
    return s


@njit(cache=True, nogil=True)
def loglik_from_parts(y, mu, all_idx, logy_pos, phi, p, gamma, gtab):
    """Full log-likelihood = series part (positive cells) + exponent part."""
    logc, needed = series_logc_cells(logy_pos, phi, p, gamma, gtab)
    if needed != 0:
        return (np.nan, needed)
    return (logc + exponent_sum(y, mu, all_idx, phi, p), 0)


# ---------------------------------------------------------------------------
# Chain core
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _series_with_growth(logy_pos, phi, p, gamma, gtab):
    """Evaluate the cells series, growing the table as needed.

    Returns (value, gtab, ok).
    """
    while True:
        val, needed = series_logc_cells(logy_pos, phi, p, gamma, gtab)
        if needed == 0:
            return (val, gtab, True)
        if needed < 0:
            return (np.nan, gtab, False)
        gtab = build_lgamma_table(gamma, needed)


@njit(cache=True, nogil=True)
def _exponent_sum_with(y, mu_sub, sub, phi, p):
    """Exponent sum over cells ``sub`` with replacement means ``mu_sub``."""
    one_m_p = 1.0 - p
    two_m_p = 2.0 - p
    s = 0.0
    comp = 0.0
    for m in range(sub.shape[0]):
        c = sub[m]
        mm = mu_sub[m]
        term = (y[c] * mm ** one_m_p / one_m_p - mm ** two_m_p / two_m_p) / phi
        yv = term - comp
        tv = s + yv
        comp = (tv - s) - yv
        s = tv
    return s


@njit(cache=True, nogil=True)
def _max_r0(logy_pos, phi, p):
    r0max = 1.0
    for c in range(logy_pos.shape[0]):
        r0c = math.exp((2.0 - p) * logy_pos[c]) / ((2.0 - p) * phi)
        if r0c > r0max:
            r0max = r0c
    return r0max


@njit(cache=True, nogil=True)
def run_chain_core(
    y, logy_pos, pos_sel, all_idx,
    a_coord, b_coord,
    coord_cells, coord_off,
    x0, lo, hi, sigma, active,
    uniforms,
    samples_out, loglik_out, logratio_out,
    accepts_out, attempts_out,
):
    """Random-walk MH within Gibbs over the free coordinates.

    Coordinate layout: 0 = p, 1 = phi, then exposure groups, then
    development groups.  ``a_coord``/``b_coord`` give, per cell, the free
    coordinate controlling its row/column factor (-1 = fixed at one).
    ``coord_cells``/``coord_off`` is a CSR map from mean coordinates to the
    cells they touch.  ``uniforms`` has shape (T, n_free, 2): one proposal
    and one acceptance uniform per coordinate visit.  ``logratio_out``
    records the log acceptance ratio of every attempted move.

    Returns the number of proposals rejected due to evaluation failure.
    """
    T = uniforms.shape[0]
    nfree = x0.shape[0]
    ncells = y.shape[0]

    x = x0.copy()
    p_cur = x[0]
    phi_cur = x[1]

    # Expanded row/column factors and means per cell.
    a_val = np.empty(ncells)
    b_val = np.empty(ncells)
    mu = np.empty(ncells)
    for c in range(ncells):
        a_val[c] = 1.0 if a_coord[c] < 0 else x[a_coord[c]]
        b_val[c] = x[b_coord[c]]
        mu[c] = a_val[c] * b_val[c]

    gamma_cur = (2.0 - p_cur) / (p_cur - 1.0)
    # Initial table sized from the largest cell at the initial state.
    r0max = _max_r0(logy_pos, phi_cur, p_cur)
    gtab = build_lgamma_table(gamma_cur, int(r0max * 1.3) + 64)

    C_cur, gtab, ok = _series_with_growth(logy_pos, phi_cur, p_cur, gamma_cur, gtab)
    if not ok:
        return -1
    E_cur = exponent_sum(y, mu, all_idx, phi_cur, p_cur)
    warn = 0

    for t in range(T):
        # Re-derive the exponent total each sweep so accept/reject deltas
        # cannot accumulate drift over 10^5+ iterations.
        E_cur = exponent_sum(y, mu, all_idx, phi_cur, p_cur)
        for k in range(nfree):
            if not active[k]:
                logratio_out[t, k] = np.nan
                continue
            cur = x[k]
            prop = truncnorm_ppf(uniforms[t, k, 0], cur, sigma[k], lo[k], hi[k])
            attempts_out[k] += 1

            accepted = False
            if k == 0:
                gamma_prop = (2.0 - prop) / (prop - 1.0)
                r0max = _max_r0(logy_pos, phi_cur, prop)
                gtab_prop = build_lgamma_table(gamma_prop, int(r0max * 1.3) + 64)
                C_star, gtab_prop, ok = _series_with_growth(
                    logy_pos, phi_cur, prop, gamma_prop, gtab_prop)
                if not ok:
                    warn += 1
                    logratio_out[t, k] = np.nan
                    continue
                E_star = exponent_sum(y, mu, all_idx, phi_cur, prop)
                dlp = (C_star + E_star) - (C_cur + E_cur)
                dlp += math.log(truncnorm_mass(cur, sigma[k], lo[k], hi[k]))
                dlp -= math.log(truncnorm_mass(prop, sigma[k], lo[k], hi[k]))
                logratio_out[t, k] = dlp
                if math.log(uniforms[t, k, 1]) < dlp:
                    accepted = True
                    x[k] = prop
                    p_cur = prop
                    gamma_cur = gamma_prop
                    gtab = gtab_prop
                    C_cur = C_star
                    E_cur = E_star
            elif k == 1:
                C_star, gtab, ok = _series_with_growth(
                    logy_pos, prop, p_cur, gamma_cur, gtab)
                if not ok:
                    warn += 1
                    logratio_out[t, k] = np.nan
                    continue
                E_star = exponent_sum(y, mu, all_idx, prop, p_cur)
                dlp = (C_star + E_star) - (C_cur + E_cur)
                dlp += math.log(truncnorm_mass(cur, sigma[k], lo[k], hi[k]))
                dlp -= math.log(truncnorm_mass(prop, sigma[k], lo[k], hi[k]))
                logratio_out[t, k] = dlp
                if math.log(uniforms[t, k, 1]) < dlp:
                    accepted = True
                    x[k] = prop
                    phi_cur = prop
                    C_cur = C_star
                    E_cur = E_star
            else:
                lo_c = coord_off[k]
                hi_c = coord_off[k + 1]
                sub = coord_cells[lo_c:hi_c]
                old_sub = exponent_sum(y, mu, sub, phi_cur, p_cur)
                # Proposed means over the affected cells only.
                delta_mu = np.empty(hi_c - lo_c)
                is_alpha = hi_c > lo_c and a_coord[sub[0]] == k
                for m in range(sub.shape[0]):
                    c = sub[m]
                    if is_alpha:
                        delta_mu[m] = prop * b_val[c]
                    else:
                        delta_mu[m] = a_val[c] * prop
                new_sub = _exponent_sum_with(y, delta_mu, sub, phi_cur, p_cur)
                dlp = new_sub - old_sub
                dlp += math.log(truncnorm_mass(cur, sigma[k], lo[k], hi[k]))
                dlp -= math.log(truncnorm_mass(prop, sigma[k], lo[k], hi[k]))
                logratio_out[t, k] = dlp
                if math.log(uniforms[t, k, 1]) < dlp:
                    accepted = True
                    x[k] = prop
                    E_cur += new_sub - old_sub
                    for m in range(sub.shape[0]):
                        c = sub[m]
                        if is_alpha:
                            a_val[c] = prop
                        else:
                            b_val[c] = prop
                        mu[c] = a_val[c] * b_val[c]
            if accepted:
                accepts_out[k] += 1
        for k in range(nfree):
            samples_out[t, k] = x[k]
        loglik_out[t] = C_cur + E_cur
    return warn
