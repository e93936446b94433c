"""Shared fixtures.

The expensive artifacts (the maximum likelihood fit, the pretuned scales,
the 10^5-iteration chains, the conditional-on-p endpoints) are built once
per session and shared between the module tests and the acceptance suite.
Seeds are fixed so every run exercises identical chains.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

import tweedie_reserving as tr
from tweedie_reserving import (OptimizerSettings, PriorBox, ProposalScales,
                               fit_boundary, fit_mle, model_spec, pretune,
                               run_chain)
from tweedie_reserving.model import MODEL_NAMES
from tweedie_reserving.reserving import conditional_on_p, predictive_outstanding

DATA = Path(__file__).parent / "data" / "example_triangle.csv"

CHAIN_T = 100_000
CHAIN_BURN = 10_000


@pytest.fixture(scope="session")
def triangle():
    return tr.load_triangle(DATA)


@pytest.fixture(scope="session")
def spec_m0(triangle):
    return model_spec("M0", triangle.I)


@pytest.fixture(scope="session")
def prior_box():
    return PriorBox()


@pytest.fixture(scope="session")
def mle_fit(triangle):
    return fit_mle(triangle)


def tuned_scales(triangle, spec, box, fit, seed):
    sd = fit.stdev()
    initial = None
    if sd is not None and np.all(np.isfinite(sd)):
        initial = ProposalScales(sigma=np.maximum(2.4 * sd, 1e-3))
    rng = np.random.default_rng(seed)
    return pretune(triangle, spec, box, fit.params, rng,
                   initial_scales=initial)


@pytest.fixture(scope="session")
def scales_m0(triangle, spec_m0, prior_box, mle_fit):
    return tuned_scales(triangle, spec_m0, prior_box, mle_fit, 2024)


@pytest.fixture(scope="session")
def chain_m0(triangle, spec_m0, prior_box, scales_m0, mle_fit):
    return run_chain(triangle, spec_m0, prior_box, scales_m0,
                     T=CHAIN_T, T_b=CHAIN_BURN, seed=11, init=mle_fit.params)


@pytest.fixture(scope="session")
def boundary_p1(triangle):
    return fit_boundary(triangle, 1)


@pytest.fixture(scope="session")
def boundary_p2(triangle):
    return fit_boundary(triangle, 2)


@pytest.fixture(scope="session")
def model_fits(triangle, prior_box, mle_fit):
    fits = {"M0": mle_fit}
    for name in MODEL_NAMES[1:]:
        spec = model_spec(name, triangle.I)
        fits[name] = fit_mle(triangle, spec, prior_box)
    return fits


@pytest.fixture(scope="session")
def model_chains(triangle, prior_box, model_fits, chain_m0):
    chains = {"M0": chain_m0}
    for k, name in enumerate(MODEL_NAMES[1:], start=1):
        fit = model_fits[name]
        scales = tuned_scales(triangle, fit.spec, prior_box, fit, 7000 + 137 * k)
        chains[name] = run_chain(triangle, fit.spec, prior_box, scales,
                                 T=CHAIN_T, T_b=CHAIN_BURN, seed=100 + k,
                                 init=fit.params)
    return chains


@pytest.fixture(scope="session")
def conditional_endpoints(triangle, spec_m0, prior_box, mle_fit):
    return conditional_on_p(triangle, spec_m0, prior_box, [1.1, 1.9],
                            T=CHAIN_T, T_b=CHAIN_BURN, seed=500,
                            opts=OptimizerSettings(), mle_fit=mle_fit)


@pytest.fixture(scope="session")
def predictive_draws(chain_m0):
    return predictive_outstanding(chain_m0, np.random.default_rng(99))
