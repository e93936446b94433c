"""Multiplicative mean structure, nested model ladder, priors, likelihood.

The full parameter vector is ``theta = (p, phi, alpha_0..alpha_I,
beta_0..beta_I)`` with the normalization ``alpha_0 = 1`` and cell means
``mu[i, j] = alpha_i * beta_j``.  A :class:`ModelSpec` ties coordinates
into shared blocks; the ladder M0..M6 ranges from the saturated model to
a single shared development level.

Free-coordinate layout used throughout the package: index 0 is ``p``,
index 1 is ``phi``, then one coordinate per exposure group, then one per
development group.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels as _k
from .density import P_MAX, P_MIN, SeriesEvaluationError, SeriesDiagnostics
from .triangle import Triangle, upper_triangle_indices

__all__ = ["FIXED_ONE", "TweedieParams", "ModelSpec", "PriorBox",
           "MODEL_NAMES", "model_spec", "mean_matrix", "log_likelihood",
           "log_likelihood_terms", "profile_beta", "profile_beta_grouped",
           "log_prior", "NEG_INF"]

FIXED_ONE = -1
NEG_INF = float("-inf")

MODEL_NAMES = ("M0", "M1", "M2", "M3", "M4", "M5", "M6")


@dataclass(frozen=True)
class TweedieParams:
    """Full parameter vector (p, phi, alpha, beta), alpha_0 = 1.

    The container accepts ``p`` anywhere in [1, 2] so that boundary fits
    (overdispersed Poisson p=1, gamma p=2) are representable; density
    evaluation separately enforces p in [1.1, 1.95].
    """

    p: float
    phi: float
    alpha: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(v) for v in self.alpha))
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        if len(self.alpha) != len(self.beta):
            raise ValueError("alpha and beta must have equal length I + 1")
        if not self.alpha:
            raise ValueError("parameter vector needs at least one accident year")
        if abs(self.alpha[0] - 1.0) > 0.0:
            raise ValueError(f"alpha_0 must equal 1, got {self.alpha[0]}")
        if not (1.0 <= self.p <= 2.0):
            raise ValueError(f"p must lie in [1, 2], got {self.p}")
        if not (self.phi > 0 and math.isfinite(self.phi)):
            raise ValueError(f"phi must be positive, got {self.phi}")
        for name, seq in (("alpha", self.alpha), ("beta", self.beta)):
            for k, v in enumerate(seq):
                if not (v > 0 and math.isfinite(v)):
                    raise ValueError(f"{name}_{k} must be positive, got {v}")

    @property
    def I(self) -> int:  # noqa: E743
        return len(self.alpha) - 1

    @property
    def dimension(self) -> int:
        """Total coordinates including the fixed alpha_0."""
        return 2 * self.I + 3


@dataclass(frozen=True)
class ModelSpec:
    """Constraint map tying (alpha, beta) coordinates into shared blocks.

    ``alpha_groups[i]`` is the exposure group of accident year ``i`` or
    ``FIXED_ONE``; ``beta_groups[j]`` is the development group of column
    ``j``.  Group indices are contiguous from 0 in order of first
    appearance.
    """

    id: str
    alpha_groups: tuple[int, ...]
    beta_groups: tuple[int, ...]

    def __post_init__(self):
        for g in (self.alpha_groups, self.beta_groups):
            seen: list[int] = []
            for v in g:
                if v == FIXED_ONE:
                    continue
                if v not in seen:
                    if v != len(seen):
                        raise ValueError("group indices must be contiguous "
                                         "in order of first appearance")
                    seen.append(v)
        if any(v != FIXED_ONE for v in self.alpha_groups if v < 0):
            raise ValueError("negative alpha group other than FIXED_ONE")
        if any(v < 0 for v in self.beta_groups):
            raise ValueError("every development column needs a group")

    @property
    def I(self) -> int:  # noqa: E743
        return len(self.alpha_groups) - 1

    @property
    def n_alpha_groups(self) -> int:
        return max((g for g in self.alpha_groups if g >= 0), default=-1) + 1

    @property
    def n_beta_groups(self) -> int:
        return max(self.beta_groups) + 1

    @property
    def free_param_count(self) -> int:
        """Free parameters including p and phi."""
        return 2 + self.n_alpha_groups + self.n_beta_groups

    @property
    def free_names(self) -> tuple[str, ...]:
        names = ["p", "phi"]
        names += [f"alpha_{g + 1}" for g in range(self.n_alpha_groups)]
        names += [f"beta_{g}" for g in range(self.n_beta_groups)]
        return tuple(names)

    def alpha_coord(self, i: int) -> int:
        """Free-coordinate index for alpha_i, or -1 when fixed at one."""
        g = self.alpha_groups[i]
        return -1 if g == FIXED_ONE else 2 + g

    def beta_coord(self, j: int) -> int:
        return 2 + self.n_alpha_groups + self.beta_groups[j]

    def alpha_block(self, g: int) -> tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.alpha_groups) if v == g)

    def beta_block(self, g: int) -> tuple[int, ...]:
        return tuple(j for j, v in enumerate(self.beta_groups) if v == g)


def _saturated(I: int) -> ModelSpec:
    return ModelSpec("M0",
                     (FIXED_ONE,) + tuple(range(I)),
                     tuple(range(I + 1)))


def model_spec(name: str, I: int) -> ModelSpec:
    """Look up one of the named nested models for a triangle of dimension I.

    M0 (saturated), M1 (single shared level) and M6 (one shared exposure
    for i >= 1, free development pattern) are defined for any I >= 1;
    the block models M2..M5 are defined for I = 9 only.
    """
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")
    if I < 1:
        raise ValueError("model specs require I >= 1")
    if name == "M0":
        return _saturated(I)
    if name == "M1":
        return ModelSpec("M1", (FIXED_ONE,) * (I + 1), (0,) * (I + 1))
    if name == "M6":
        return ModelSpec("M6", (FIXED_ONE,) + (0,) * I, tuple(range(I + 1)))
    if I != 9:
        raise ValueError(f"{name} is defined only for I = 9 triangles")
    if name == "M2":
        return ModelSpec("M2",
                         (FIXED_ONE,) * 5 + (0,) * 5,
                         (0,) * 5 + (1,) * 5)
    if name == "M3":
        return ModelSpec("M3",
                         (FIXED_ONE,) * 2 + (0,) * 4 + (1,) * 4,
                         (0,) * 2 + (1,) * 4 + (2,) * 4)
    if name == "M4":
        return ModelSpec("M4",
                         (FIXED_ONE,) * 2 + (0,) * 2 + (1,) * 3 + (2,) * 3,
                         (0,) * 2 + (1,) * 2 + (2,) * 3 + (3,) * 3)
    # M5
    return ModelSpec("M5",
                     (FIXED_ONE,) * 2 + (0,) * 2 + (1,) * 2 + (2,) * 2 + (3,) * 2,
                     (0,) * 2 + (1,) * 2 + (2,) * 2 + (3,) * 2 + (4,) * 2)


@dataclass(frozen=True)
class PriorBox:
    """Independent uniform prior ranges per parameter family."""

    p_range: tuple[float, float] = (P_MIN, P_MAX)
    phi_range: tuple[float, float] = (0.01, 100.0)
    alpha_range: tuple[float, float] = (0.01, 100.0)
    beta_range: tuple[float, float] = (0.01, 1.0e4)

    def __post_init__(self):
        for name in ("p_range", "phi_range", "alpha_range", "beta_range"):
            a, b = getattr(self, name)
            if not (a < b):
                raise ValueError(f"{name} must satisfy a < b, got ({a}, {b})")

    def bounds(self, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) arrays over the spec's free coordinates."""
        lo = [self.p_range[0], self.phi_range[0]]
        hi = [self.p_range[1], self.phi_range[1]]
        lo += [self.alpha_range[0]] * spec.n_alpha_groups
        hi += [self.alpha_range[1]] * spec.n_alpha_groups
        lo += [self.beta_range[0]] * spec.n_beta_groups
        hi += [self.beta_range[1]] * spec.n_beta_groups
        return np.asarray(lo), np.asarray(hi)

    def contains(self, vec: np.ndarray, spec: ModelSpec) -> bool:
        lo, hi = self.bounds(spec)
        return bool(np.all(vec > lo) and np.all(vec < hi))


# ---------------------------------------------------------------------------
# Free-coordinate packing
# ---------------------------------------------------------------------------


def params_to_free(params: TweedieParams, spec: ModelSpec) -> np.ndarray:
    """Pack a full vector into the spec's free coordinates, checking ties."""
    _check_ties(params, spec)
    vec = np.empty(spec.free_param_count)
    vec[0] = params.p
    vec[1] = params.phi
    for g in range(spec.n_alpha_groups):
        vec[2 + g] = params.alpha[spec.alpha_block(g)[0]]
    off = 2 + spec.n_alpha_groups
    for g in range(spec.n_beta_groups):
        vec[off + g] = params.beta[spec.beta_block(g)[0]]
    return vec


def free_to_params(vec: np.ndarray, spec: ModelSpec) -> TweedieParams:
    """Expand free coordinates into the full parameter vector."""
    I = spec.I
    alpha = [1.0] * (I + 1)
    for i in range(I + 1):
        c = spec.alpha_coord(i)
        if c >= 0:
            alpha[i] = float(vec[c])
    beta = [float(vec[spec.beta_coord(j)]) for j in range(I + 1)]
    return TweedieParams(p=float(vec[0]), phi=float(vec[1]),
                         alpha=tuple(alpha), beta=tuple(beta))


def _check_ties(params: TweedieParams, spec: ModelSpec) -> None:
    if params.I != spec.I:
        raise ValueError(f"params have I={params.I} but spec has I={spec.I}")
    for i, g in enumerate(spec.alpha_groups):
        if g == FIXED_ONE:
            if params.alpha[i] != 1.0:
                raise ValueError(
                    f"alpha_{i} is fixed at 1 under {spec.id}, got "
                    f"{params.alpha[i]}")
        else:
            ref = params.alpha[spec.alpha_block(g)[0]]
            if params.alpha[i] != ref:
                raise ValueError(
                    f"alpha_{i} violates the {spec.id} tie (group {g})")
    for j, g in enumerate(spec.beta_groups):
        ref = params.beta[spec.beta_block(g)[0]]
        if params.beta[j] != ref:
            raise ValueError(f"beta_{j} violates the {spec.id} tie (group {g})")


# ---------------------------------------------------------------------------
# Mean structure and likelihood
# ---------------------------------------------------------------------------


def mean_matrix(params: TweedieParams, spec: ModelSpec) -> dict[tuple[int, int], float]:
    """Cell means mu[i, j] = alpha_i * beta_j over the full (I+1)^2 square."""
    _check_ties(params, spec)
    return {(i, j): params.alpha[i] * params.beta[j]
            for i in range(params.I + 1) for j in range(params.I + 1)}


class CellData(NamedTuple):
    """Flattened upper-triangle data bound to a spec's coordinate layout."""

    y: np.ndarray           # payments, row-major upper triangle
    i_idx: np.ndarray
    j_idx: np.ndarray
    logy_pos: np.ndarray    # log of the positive payments
    pos_sel: np.ndarray     # indices of positive cells within y
    all_idx: np.ndarray
    a_coord: np.ndarray     # per cell: free coord of its row factor (-1 fixed)
    b_coord: np.ndarray     # per cell: free coord of its column factor
    coord_cells: np.ndarray  # CSR values: cells touched by each mean coord
    coord_off: np.ndarray    # CSR offsets, length n_free + 1


def prepare_cells(t: Triangle, spec: ModelSpec) -> CellData:
    if t.I != spec.I:
        raise ValueError(f"triangle has I={t.I} but spec has I={spec.I}")
    idx = upper_triangle_indices(t)
    y = np.array([t.rows[i][j] for i, j in idx], dtype=float)
    i_idx = np.array([i for i, _ in idx], dtype=np.int64)
    j_idx = np.array([j for _, j in idx], dtype=np.int64)
    pos_sel = np.flatnonzero(y > 0).astype(np.int64)
    logy_pos = np.log(y[pos_sel])
    all_idx = np.arange(y.shape[0], dtype=np.int64)
    a_coord = np.array([spec.alpha_coord(i) for i in i_idx], dtype=np.int64)
    b_coord = np.array([spec.beta_coord(j) for j in j_idx], dtype=np.int64)
    nfree = spec.free_param_count
    lists: list[list[int]] = [[] for _ in range(nfree)]
    for c in range(y.shape[0]):
        if a_coord[c] >= 0:
            lists[a_coord[c]].append(c)
        lists[b_coord[c]].append(c)
    coord_off = np.zeros(nfree + 1, dtype=np.int64)
    flat: list[int] = []
    for k in range(nfree):
        flat.extend(lists[k])
        coord_off[k + 1] = len(flat)
    coord_cells = np.array(flat, dtype=np.int64)
    return CellData(y=y, i_idx=i_idx, j_idx=j_idx, logy_pos=logy_pos,
                    pos_sel=pos_sel, all_idx=all_idx, a_coord=a_coord,
                    b_coord=b_coord, coord_cells=coord_cells,
                    coord_off=coord_off)


def _mu_cells(params: TweedieParams, cells: CellData) -> np.ndarray:
    alpha = np.asarray(params.alpha)
    beta = np.asarray(params.beta)
    return alpha[cells.i_idx] * beta[cells.j_idx]


def log_likelihood(t: Triangle, params: TweedieParams,
                   spec: ModelSpec | None = None,
                   cells: CellData | None = None) -> float:
    """Triangle log-likelihood at the given parameters.

    Positive cells contribute the continuous log-density, zero cells the
    log zero-mass.  Cell terms are accumulated with compensated summation.
    """
    if spec is None:
        spec = _saturated(t.I)
    _check_ties(params, spec)
    _check_p_range(params.p)
    if cells is None:
        cells = prepare_cells(t, spec)
    mu = _mu_cells(params, cells)
    gamma = (2.0 - params.p) / (params.p - 1.0)
    r0max = _k._max_r0(cells.logy_pos, params.phi, params.p)
    gtab = _k.build_lgamma_table(gamma, int(r0max * 1.3) + 64)
    while True:
        value, needed = _k.loglik_from_parts(
            cells.y, mu, cells.all_idx, cells.logy_pos,
            params.phi, params.p, gamma, gtab)
        if needed == 0:
            break
        if needed < 0:
            _raise_offending_cell(t, params, cells)
        gtab = _k.build_lgamma_table(gamma, needed)
    if not math.isfinite(value):
        _raise_offending_cell(t, params, cells)
    return float(value)


def _check_p_range(p: float) -> None:
    if not (P_MIN <= p <= P_MAX):
        raise ValueError(
            f"likelihood evaluation requires p in [{P_MIN}, {P_MAX}], got {p}")


def _raise_offending_cell(t: Triangle, params: TweedieParams,
                          cells: CellData) -> None:
    """Locate the failing cell with the scalar path and raise."""
    from .density import TweediePoint, log_density

    for c in cells.pos_sel:
        i, j = int(cells.i_idx[c]), int(cells.j_idx[c])
        pt = TweediePoint(mu=params.alpha[i] * params.beta[j],
                          phi=params.phi, p=params.p)
        try:
            log_density(float(cells.y[c]), pt)
        except SeriesEvaluationError as exc:
            raise SeriesEvaluationError(
                f"density evaluation failed at cell ({i}, {j}): {exc}",
                exc.diagnostics) from exc
    raise SeriesEvaluationError(
        "non-finite log-likelihood with no single offending cell",
        SeriesDiagnostics(0.0, 0, 0, 0, float("nan")))


def log_likelihood_terms(t: Triangle, params: TweedieParams,
                         spec: ModelSpec | None = None) -> np.ndarray:
    """Per-cell log-likelihood contributions in row-major order."""
    from .density import TweediePoint, log_density, log_zero_mass

    if spec is None:
        spec = _saturated(t.I)
    _check_ties(params, spec)
    _check_p_range(params.p)
    out = []
    for i, j in upper_triangle_indices(t):
        y = t.rows[i][j]
        pt = TweediePoint(mu=params.alpha[i] * params.beta[j],
                          phi=params.phi, p=params.p)
        out.append(log_zero_mass(pt) if y == 0 else log_density(y, pt))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# Profile development pattern and prior
# ---------------------------------------------------------------------------


def profile_beta(t: Triangle, alpha: Sequence[float], p: float) -> list[float]:
    """Stationary-point development factors given exposures and p.

    beta_k = sum_i Y[i,k] alpha_i^(1-p) / sum_i alpha_i^(2-p) over the
    observed column k.  A column of zero payments yields beta_k = 0, which
    callers must treat as a boundary case (the likelihood requires
    beta > 0); a warning is emitted.
    """
    I = t.I
    if len(alpha) != I + 1:
        raise ValueError(f"alpha must have length {I + 1}")
    a = np.asarray(alpha, dtype=float)
    if np.any(a <= 0):
        raise ValueError("exposures must be positive")
    beta: list[float] = []
    for k in range(I + 1):
        rows = np.arange(I - k + 1)
        yk = np.array([t.rows[i][k] for i in rows])
        num = float(np.sum(yk * a[rows] ** (1.0 - p)))
        den = float(np.sum(a[rows] ** (2.0 - p)))
        bk = num / den
        if bk == 0.0:
            warnings.warn(f"development column {k} is entirely zero; "
                          "profile value 0 lies on the boundary")
        beta.append(bk)
    return beta


def profile_beta_grouped(t: Triangle, alpha: Sequence[float], p: float,
                         spec: ModelSpec) -> list[float]:
    """Grouped profile: one stationary value per development block.

    Reduces to :func:`profile_beta` for the saturated spec.  Returns the
    expanded beta sequence of length I + 1.
    """
    I = t.I
    a = np.asarray(alpha, dtype=float)
    values = np.empty(spec.n_beta_groups)
    for g in range(spec.n_beta_groups):
        num = 0.0
        den = 0.0
        for j in spec.beta_block(g):
            rows = np.arange(I - j + 1)
            yj = np.array([t.rows[i][j] for i in rows])
            num += float(np.sum(yj * a[rows] ** (1.0 - p)))
            den += float(np.sum(a[rows] ** (2.0 - p)))
        values[g] = num / den
        if values[g] == 0.0:
            warnings.warn(f"development block {g} is entirely zero; "
                          "profile value 0 lies on the boundary")
    return [float(values[spec.beta_groups[j]]) for j in range(I + 1)]


def log_prior(params: TweedieParams, spec: ModelSpec, box: PriorBox) -> float:
    """Log of the product of uniform densities over the free coordinates.

    Returns -inf when any coordinate leaves its box.
    """
    vec = params_to_free(params, spec)
    lo, hi = box.bounds(spec)
    if not (np.all(vec > lo) and np.all(vec < hi)):
        return NEG_INF
    return float(-np.sum(np.log(hi - lo)))


def log_prior_constant(spec: ModelSpec, box: PriorBox) -> float:
    """The in-box value of :func:`log_prior` (it is flat inside the box)."""
    lo, hi = box.bounds(spec)
    return float(-np.sum(np.log(hi - lo)))
