"""Feasibility diagnostics: exact-feasible and provably infeasible cases."""

import math

import numpy as np
import pytest

from harmonize.diagnostics import (
    FEASIBILITY_MARGINAL_FLOOR,
    feasibility_from_matrix,
    first_order_feasibility,
    kth_order_feasibility,
    second_order_feasibility,
)
from harmonize.measurement import (
    MeasurementModel,
    discretize,
    discretize_second_order,
)
from harmonize.probcore import paired_empirical
from harmonize.solver import FitOptions, implied_marginal


def test_feasible_marginal_accepts():
    disc = discretize(MeasurementModel(family="binomial", support_size=2), 4)
    rng = np.random.default_rng(13)
    theta = rng.dirichlet(np.ones(4))
    phat = implied_marginal(theta, disc)
    res = first_order_feasibility(phat, disc, n=100)
    assert res.order == 1
    assert res.df == 2
    assert res.divergence < 1e-6
    assert res.p_asymptotic > 0.99
    assert res.p_finite == 1.0
    assert res.sample_size == 100


def test_perfectly_anticorrelated_pairs_are_infeasible():
    # with one trial per score, any latent mixture implies
    # p(0,1) = p(1,0) = E[gamma(1-gamma)] = 1/6 after bin-averaging over
    # [0,1], independent of the bin masses; the empirical pmf putting 1/2
    # on each discordant cell therefore has divergence exactly log 3
    model = MeasurementModel(family="binomial", support_size=1)
    disc2 = discretize_second_order(model, 2)
    phat2 = np.array([0.0, 0.5, 0.5, 0.0])
    n = 50
    res = second_order_feasibility(phat2, disc2, n_pairs=n)
    assert res.order == 2
    assert res.df == 3
    assert res.divergence == pytest.approx(math.log(3.0), rel=1e-10)
    assert res.statistic == pytest.approx(n * math.log(3.0), rel=1e-10)
    assert res.p_asymptotic < 1e-20
    want_finite = (n + 1) ** 3 * math.exp(-n * math.log(3.0))
    assert res.p_finite == pytest.approx(want_finite, rel=1e-9)


def test_sample_size_defaults_to_distribution_count():
    model = MeasurementModel(family="binomial", support_size=1)
    disc2 = discretize_second_order(model, 2)
    phat2 = paired_empirical([0, 1, 1, 0], [1, 0, 1, 0], support_size=1)
    res = second_order_feasibility(phat2, disc2)
    assert res.sample_size == 4


def test_feasibility_from_matrix_validation():
    disc = discretize(MeasurementModel(family="binomial", support_size=1), 2)
    with pytest.raises(ValueError, match="rows"):
        feasibility_from_matrix([0.5, 0.25, 0.25], disc.matrix, n=10, order=1)
    with pytest.raises(ValueError, match="sample size"):
        feasibility_from_matrix([0.5, 0.5], disc.matrix, n=0, order=1)


def test_kth_order_guard_and_delegation():
    model = MeasurementModel(family="binomial", support_size=1)
    with pytest.raises(ValueError, match="max_order"):
        kth_order_feasibility([0.0] * 7 + [1.0], model, R=2, order=3, n=10)
    disc2 = discretize_second_order(model, 2, nodes_per_bin=5)
    phat2 = np.array([0.0, 0.5, 0.5, 0.0])
    via_kth = kth_order_feasibility(phat2, model, R=2, order=2, n=50)
    direct = second_order_feasibility(phat2, disc2, n_pairs=50)
    assert via_kth.statistic == pytest.approx(direct.statistic, rel=1e-14)
    assert via_kth.df == direct.df


def test_tail_bound_is_pluggable():
    disc = discretize(MeasurementModel(family="binomial", support_size=1), 2)
    res = first_order_feasibility(
        [0.5, 0.5], disc, n=10, tail_bound=lambda t, n, k: 0.123
    )
    assert res.p_finite == 0.123


def test_custom_options_keep_their_budget():
    disc = discretize(MeasurementModel(family="binomial", support_size=2), 4)
    res = first_order_feasibility(
        [0.2, 0.3, 0.5], disc, n=30, options=FitOptions(max_iters=500, tol=1e-14)
    )
    assert res.latent.iterations <= 500
    assert math.isfinite(res.statistic)


def test_marginal_floor_is_an_underflow_guard_only():
    assert 0.0 < FEASIBILITY_MARGINAL_FLOOR <= 1e-250
