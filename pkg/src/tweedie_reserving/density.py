"""Tweedie compound Poisson density, parameter transforms and sampling.

The distribution is handled in two equivalent parameterizations:

* mean form ``(mu, phi, p)`` with variance ``phi * mu**p``, ``p`` in (1, 2);
* compound Poisson form ``(lambda, tau, gamma)``: a Poisson(lambda) number
  of gamma severities with mean ``tau`` and shape ``gamma``.

The continuous part of the density carries a normalizing constant defined
by an infinite series which is summed adaptively around its peak term in
log scale; densities are only evaluated for ``p`` in [1.1, 1.95], where
the summation is well behaved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k

__all__ = ["P_MIN", "P_MAX", "TweediePoint", "CompoundPoissonParams",
           "SeriesDiagnostics", "SeriesEvaluationError",
           "to_compound_poisson", "from_compound_poisson",
           "log_zero_mass", "log_density", "sample"]

P_MIN = 1.1
P_MAX = 1.95


@dataclass(frozen=True)
class TweediePoint:
    """Mean-form parameter point (mu, phi, p)."""

    mu: float
    phi: float
    p: float

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be positive and finite, got {self.mu}")
        if not (self.phi > 0 and math.isfinite(self.phi)):
            raise ValueError(f"phi must be positive and finite, got {self.phi}")
        if not (1.0 < self.p < 2.0):
            raise ValueError(f"p must lie in (1, 2), got {self.p}")


@dataclass(frozen=True)
class CompoundPoissonParams:
    """Frequency/severity form: Poisson rate, gamma mean and gamma shape."""

    lam: float
    tau: float
    gamma_shape: float

    def __post_init__(self):
        for name in ("lam", "tau", "gamma_shape"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class SeriesDiagnostics:
    """Truncation report for one series evaluation."""

    r_max_index: float
    r_lower: int
    r_upper: int
    terms_summed: int
    log_c: float


class SeriesEvaluationError(ArithmeticError):
    """Series evaluation failed; carries the partial diagnostics."""

    def __init__(self, message: str, diagnostics: SeriesDiagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def _check_density_p(p: float) -> None:
    if not (P_MIN <= p <= P_MAX):
        raise ValueError(
            f"density evaluation requires p in [{P_MIN}, {P_MAX}], got {p}")


def to_compound_poisson(pt: TweediePoint) -> CompoundPoissonParams:
    """Map the mean form to the frequency/severity form."""
    lam = pt.mu ** (2.0 - pt.p) / (pt.phi * (2.0 - pt.p))
    tau = pt.mu / lam
    gamma_shape = (2.0 - pt.p) / (pt.p - 1.0)
    return CompoundPoissonParams(lam=lam, tau=tau, gamma_shape=gamma_shape)


def from_compound_poisson(cp: CompoundPoissonParams) -> TweediePoint:
    """Inverse of :func:`to_compound_poisson`."""
    p = (cp.gamma_shape + 2.0) / (cp.gamma_shape + 1.0)
    mu = cp.lam * cp.tau
    phi = cp.lam ** (1.0 - p) * cp.tau ** (2.0 - p) / (2.0 - p)
    return TweediePoint(mu=mu, phi=phi, p=p)


def log_zero_mass(pt: TweediePoint) -> float:
    """log P[Y = 0] = -mu^(2-p) / (phi * (2-p)); equals minus the Poisson rate."""
    return -pt.mu ** (2.0 - pt.p) / (pt.phi * (2.0 - pt.p))


def log_density(y: float, pt: TweediePoint,
                with_diagnostics: bool = False):
    """Log of the continuous density at ``y > 0``.

    Returns the value, or ``(value, SeriesDiagnostics)`` when
    ``with_diagnostics`` is set.  Raises ``ValueError`` for ``p`` outside
    [1.1, 1.95] and :class:`SeriesEvaluationError` if the summation fails.
    """
    if not (y > 0 and math.isfinite(y)):
        raise ValueError(f"y must be positive and finite, got {y}")
    _check_density_p(pt.p)
    log_c, r0, rl, ru, status = _k.series_logc_scalar(y, pt.phi, pt.p)
    diag = SeriesDiagnostics(r_max_index=r0, r_lower=int(rl), r_upper=int(ru),
                             terms_summed=int(ru - rl + 1), log_c=log_c)
    if status != _k.STATUS_OK:
        raise SeriesEvaluationError(
            f"series index cap exceeded at y={y}, phi={pt.phi}, p={pt.p}", diag)
    exponent = (y * pt.mu ** (1.0 - pt.p) / (1.0 - pt.p)
                - pt.mu ** (2.0 - pt.p) / (2.0 - pt.p)) / pt.phi
    value = log_c + exponent
    if not math.isfinite(value):
        raise SeriesEvaluationError(
            f"non-finite log-density at y={y}, mu={pt.mu}, phi={pt.phi}, "
            f"p={pt.p}", diag)
    if with_diagnostics:
        return value, diag
    return value


def sample(pt: TweediePoint, rng: np.random.Generator, size=None):
    """Draw variates: N ~ Poisson(lambda), then the sum of N gamma severities.

    The N severities with shape ``gamma`` and mean ``tau`` are drawn as a
    single gamma variate with shape ``N * gamma`` and the same scale.
    Returns 0 where N = 0.
    """
    cp = to_compound_poisson(pt)
    scale = cp.tau / cp.gamma_shape
    n = rng.poisson(cp.lam, size=size)
    if size is None:
        return float(rng.gamma(n * cp.gamma_shape, scale)) if n > 0 else 0.0
    out = np.zeros(np.shape(n))
    mask = n > 0
    if np.any(mask):
        out[mask] = rng.gamma(n[mask] * cp.gamma_shape, scale)
    return out
