"""Latent-density solver: objective, fixed-point step, and the full fit loop."""

import math

import numpy as np
import pytest

from harmonize.errors import DegenerateModelError
from harmonize.measurement import MeasurementModel, discretize, discretize_second_order
from harmonize.probcore import ObservationRecord, paired_empirical, tv_distance
from harmonize.solver import (
    BinnedLatent,
    FitOptions,
    contraction_diagnostic,
    em_step,
    fit,
    fit_per_cell,
    fit_second_order,
    implied_marginal,
    regularized_loglik,
)

# Binomial with one trial, two latent bins: exact bin integrals of (1-g, g).
A1 = np.array([[3.0 / 8.0, 1.0 / 8.0], [1.0 / 8.0, 3.0 / 8.0]])


def disc1():
    return discretize(MeasurementModel(family="binomial", support_size=1), 2)


def test_fit_options_validation():
    with pytest.raises(ValueError, match="unknown solver"):
        FitOptions(solver="newton")
    with pytest.raises(ValueError, match="max_iters"):
        FitOptions(max_iters=0)
    with pytest.raises(ValueError, match="tol"):
        FitOptions(tol=0.0)
    with pytest.raises(ValueError, match="marginal_floor"):
        FitOptions(marginal_floor=-1e-9)


def test_binned_latent_validation_and_density():
    with pytest.raises(ValueError, match="length"):
        BinnedLatent(theta=np.array([1.0]), bins=2, mu=0.0, loglik=0.0)
    with pytest.raises(ValueError, match="nonnegative"):
        BinnedLatent(theta=np.array([1.5, -0.5]), bins=2, mu=0.0, loglik=0.0)
    with pytest.raises(ValueError, match="sums"):
        BinnedLatent(theta=np.array([0.6, 0.6]), bins=2, mu=0.0, loglik=0.0)
    lat = BinnedLatent(theta=np.array([0.25, 0.75]), bins=2, mu=0.1, loglik=-1.0)
    np.testing.assert_array_equal(lat.density(), [0.5, 1.5])


def test_binned_latent_json_round_trip():
    lat = BinnedLatent(
        theta=np.array([0.25, 0.75]),
        bins=2,
        mu=0.01,
        loglik=-1.25,
        iterations=17,
        converged=False,
    )
    back = BinnedLatent.from_json(lat.to_json())
    np.testing.assert_array_equal(back.theta, lat.theta)
    assert (back.bins, back.mu, back.loglik) == (2, 0.01, -1.25)
    assert back.iterations == 17
    assert back.converged is False


def test_regularized_loglik_closed_form():
    theta = np.array([0.25, 0.75])
    phat = np.array([0.5, 0.5])
    # A1 @ theta = (3/16, 5/16)
    want = 0.5 * math.log(3.0 / 16.0) + 0.5 * math.log(5.0 / 16.0)
    assert regularized_loglik(theta, A1, phat, 0.0) == pytest.approx(want, rel=1e-14)
    want += (0.1 / 2.0) * (math.log(0.5) + math.log(1.5))
    assert regularized_loglik(theta, disc1(), phat, 0.1) == pytest.approx(want, rel=1e-13)


def test_regularized_loglik_edge_cases():
    a = np.array([[0.5, 0.0], [0.0, 0.5]])
    assert regularized_loglik([1.0, 0.0], a, [0.0, 1.0], 0.0) == -math.inf
    assert regularized_loglik([1.0, 0.0], A1, [0.5, 0.5], 0.1) == -math.inf
    with pytest.raises(ValueError, match="shape mismatch"):
        regularized_loglik([1.0], A1, [0.5, 0.5], 0.0)
    with pytest.raises(ValueError, match="mu"):
        regularized_loglik([0.5, 0.5], A1, [0.5, 0.5], -0.1)


def test_em_step_closed_form():
    got = em_step([0.5, 0.5], A1, [1.0, 0.0], 0.0)
    np.testing.assert_allclose(got, [0.75, 0.25], rtol=0, atol=1e-15)


def test_em_step_regularized_floor_and_mass():
    mu = 0.1
    got = em_step([0.5, 0.5], A1, [1.0, 0.0], mu)
    want = np.array([0.75, 0.25]) / 1.1 + mu / (1.1 * 2.0)
    np.testing.assert_allclose(got, want, rtol=1e-15, atol=0)
    assert got.sum() == pytest.approx(1.0, abs=1e-15)
    assert got.min() >= mu / ((1.0 + mu) * 2.0)


def test_em_step_degenerate():
    a = np.array([[0.5, 0.0], [0.0, 0.5]])
    with pytest.raises(DegenerateModelError, match="vanishes"):
        em_step([1.0, 0.0], a, [0.0, 1.0], 0.0)


def test_em_step_never_decreases_objective():
    rng = np.random.default_rng(3)
    disc = discretize(MeasurementModel(family="gaussian", support_size=6, bandwidth=1.0), 9)
    theta = rng.dirichlet(np.ones(9))
    phat = rng.dirichlet(np.ones(7))
    for mu in (0.0, 0.05):
        t = theta
        prev = regularized_loglik(t, disc, phat, mu)
        for _ in range(25):
            t = em_step(t, disc, phat, mu)
            cur = regularized_loglik(t, disc, phat, mu)
            assert cur >= prev - 1e-12
            prev = cur


def test_fit_recovers_feasible_marginal():
    disc = discretize(MeasurementModel(family="binomial", support_size=3), 4)
    rng = np.random.default_rng(11)
    theta_true = rng.dirichlet(np.ones(4))
    target = implied_marginal(theta_true, disc)
    lat = fit(disc, target, mu=0.0, options=FitOptions(tol=1e-14, max_iters=1_000_000))
    assert lat.converged
    assert tv_distance(implied_marginal(lat, disc), target) <= 1e-5


def test_fit_regularized_floor_and_reported_loglik():
    disc = discretize(MeasurementModel(family="gaussian", support_size=8, bandwidth=1.5), 12)
    phat = np.zeros(9)
    phat[[0, 3, 7]] = np.array([0.2, 0.5, 0.3])
    for solver in ("em_fixed_point", "mirror_ascent"):
        lat = fit(disc, phat, mu=0.05, options=FitOptions(solver=solver))
        assert lat.converged
        check = regularized_loglik(lat.theta, disc, phat, 0.05)
        assert lat.loglik == pytest.approx(check, rel=1e-12)
    em = fit(disc, phat, mu=0.05)
    assert em.theta.min() >= 0.05 / (1.05 * 12) * (1.0 - 1e-9)


def test_fit_solvers_agree():
    disc = discretize(MeasurementModel(family="laplace", support_size=7, bandwidth=0.8), 15)
    rng = np.random.default_rng(5)
    phat = rng.dirichlet(np.ones(8) * 3.0)
    opts = dict(max_iters=200_000, tol=1e-16)
    em = fit(disc, phat, mu=0.01, options=FitOptions(solver="em_fixed_point", **opts))
    mi = fit(disc, phat, mu=0.01, options=FitOptions(solver="mirror_ascent", **opts))
    assert tv_distance(em.theta, mi.theta) <= 1e-5
    assert abs(em.loglik - mi.loglik) <= 1e-9


def test_fit_degenerate_at_initialization():
    a = np.array([[0.5, 0.5], [0.0, 0.0]])
    with pytest.raises(DegenerateModelError, match="initialization"):
        fit(a, [0.5, 0.5], mu=0.0)


def test_fit_degenerate_zero_init_bin_with_regularization():
    with pytest.raises(DegenerateModelError, match="initialization"):
        fit(A1, [0.5, 0.5], mu=0.1, options=FitOptions(init_theta=np.array([1.0, 0.0])))


def test_fit_init_theta_validation():
    with pytest.raises(ValueError, match="length"):
        fit(A1, [0.5, 0.5], mu=0.0, options=FitOptions(init_theta=np.array([1.0])))
    with pytest.raises(ValueError, match="sum"):
        fit(A1, [0.5, 0.5], mu=0.0, options=FitOptions(init_theta=np.array([0.7, 0.7])))


def test_fit_hits_iteration_cap():
    disc = discretize(MeasurementModel(family="gaussian", support_size=5, bandwidth=0.7), 10)
    phat = np.full(6, 1.0 / 6.0)
    lat = fit(disc, phat, mu=0.001, options=FitOptions(max_iters=1, tol=1e-16))
    assert not lat.converged
    assert lat.iterations == 1
    assert math.isfinite(lat.loglik)
    assert lat.loglik == pytest.approx(
        regularized_loglik(lat.theta, disc, phat, 0.001), rel=1e-12
    )


def test_fit_mu_validation():
    with pytest.raises(ValueError, match="mu"):
        fit(A1, [0.5, 0.5], mu=-0.01)
    with pytest.raises(ValueError, match="rows"):
        fit(A1, [0.5, 0.25, 0.25], mu=0.0)


def test_implied_marginal_closed_form():
    got = implied_marginal(np.array([1.0, 0.0]), disc1())
    np.testing.assert_allclose(got.probs, [0.75, 0.25], rtol=0, atol=1e-15)
    with pytest.raises(ValueError, match="length"):
        implied_marginal(np.array([1.0]), disc1())
    with pytest.raises(DegenerateModelError, match="no mass"):
        implied_marginal(np.array([0.5, 0.5]), np.zeros((2, 2)))


def test_contraction_diagnostic_on_feasible_target():
    errs = contraction_diagnostic(np.array([0.5, 0.5]), disc1(), [0.75, 0.25], steps=6)
    assert errs.shape == (7,)
    assert errs[0] == pytest.approx(0.5, abs=1e-15)
    assert np.all(np.diff(errs) <= 1e-15)
    assert errs[-1] < errs[0]


def test_fit_per_cell_keys():
    from harmonize.probcore import CovariateCell

    disc = discretize(MeasurementModel(family="binomial", support_size=2), 3)
    records = [
        ObservationRecord("a", 1, "Y", 0, 65.0, "all"),
        ObservationRecord("b", 1, "Y", 2, 75.0, "all"),
        ObservationRecord("c", 1, "Y", 1, 66.0, "all"),
    ]
    trivial = fit_per_cell(records, disc, mu=0.05)
    assert set(trivial) == {None}
    assert trivial[None].bins == 3
    cells = [
        CovariateCell(group="all", age_center=65.0, half_width=2.0),
        CovariateCell(group="all", age_center=75.0, half_width=2.0),
    ]
    per = fit_per_cell(records, disc, mu=0.05, cells=cells)
    assert set(per) == {c.key() for c in cells}


def test_fit_second_order_runs():
    model = MeasurementModel(family="binomial", support_size=1)
    disc2 = discretize_second_order(model, 2)
    phat2 = paired_empirical([0, 0, 1, 1, 1], [0, 1, 1, 1, 0], support_size=1)
    lat = fit_second_order(disc2, phat2, mu=0.02)
    assert lat.bins == 2
    assert lat.converged
    assert math.isfinite(lat.loglik)
