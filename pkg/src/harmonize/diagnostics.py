"""Feasibility tests: can any latent mixing density explain the data?

The k-th order test fits an unregularized (mu = 0) binned latent to the
empirical pmf of k-tuples of conditionally iid scores and measures the
Kullback-Leibler divergence D of the empirical pmf from the fitted implied
marginal, i.e. the divergence from the closest point of the model's
feasible set. Two p-values accompany the statistic n*D:

* asymptotic: P(ChiSq_df > 2*n*D) with df = (N+1)^k - 1,
* finite-sample: a pluggable upper bound on P(D(empirical||true) >= t)
  evaluated at t = D, by default the method-of-types bound.

Both are conservative (the divergence is measured to a fitted projection,
not a fixed truth), which is the intended reading: small p-values are
strong evidence of infeasibility. Orders k >= 3 are supported generically
but cost (N+1)^k x R memory; the guard argument keeps that explicit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measurement import (
    DiscretizedModel,
    MeasurementModel,
    SecondOrderModel,
    discretize_kth_order,
)
from .probcore import (
    ScoreDistribution,
    as_probs,
    chi_square_sf,
    kl_divergence,
    multinomial_kl_tail_bound,
)
from .solver import BinnedLatent, FitOptions, fit, implied_marginal

# During an unregularized projection the iterate can park mass arbitrarily
# close to the boundary; this floor keeps marginals out of log(0). It sits
# just above the denormal range so it only catches hard underflow: an
# infeasible model can give observed cells true implied mass of 1e-100 or
# less, and a larger floor would bias the projection there.
FEASIBILITY_MARGINAL_FLOOR = 1e-300


@dataclass
class FeasibilityResult:
    """Outcome of one feasibility test."""

    order: int
    statistic: float
    df: int
    p_asymptotic: float
    p_finite: float
    divergence: float
    implied: ScoreDistribution
    latent: BinnedLatent
    sample_size: int


def _feasibility_options(options: FitOptions | None) -> FitOptions:
    opts = options or FitOptions()
    if opts.marginal_floor == 0.0:
        opts = FitOptions(
            solver=opts.solver,
            max_iters=opts.max_iters,
            tol=opts.tol,
            init_theta=opts.init_theta,
            marginal_floor=FEASIBILITY_MARGINAL_FLOOR,
        )
    return opts


def feasibility_from_matrix(
    phat,
    matrix,
    n: int,
    order: int,
    options: FitOptions | None = None,
    tail_bound=multinomial_kl_tail_bound,
) -> FeasibilityResult:
    """Run the order-k test given the k-fold discretized matrix."""
    p = as_probs(phat)
    m = np.asarray(matrix, dtype=np.float64)
    if p.size != m.shape[0]:
        raise ValueError(f"phat has {p.size} cells but matrix has {m.shape[0]} rows")
    if n < 1:
        raise ValueError("sample size must be >= 1")
    latent = fit(m, p, 0.0, _feasibility_options(options))
    implied = implied_marginal(latent, m)
    d = kl_divergence(p, implied)
    stat = n * d
    df = p.size - 1
    return FeasibilityResult(
        order=order,
        statistic=float(stat),
        df=df,
        p_asymptotic=chi_square_sf(2.0 * stat, df),
        p_finite=float(tail_bound(d, n, p.size)),
        divergence=float(d),
        implied=implied,
        latent=latent,
        sample_size=int(n),
    )


def first_order_feasibility(
    phat,
    disc: DiscretizedModel,
    n: int | None = None,
    options: FitOptions | None = None,
    tail_bound=multinomial_kl_tail_bound,
) -> FeasibilityResult:
    """Test the observed score pmf against the feasible set of one model."""
    if n is None:
        n = getattr(phat, "count", 0)
    return feasibility_from_matrix(phat, disc.matrix, n, 1, options, tail_bound)


def second_order_feasibility(
    phat2,
    disc2: SecondOrderModel,
    n_pairs: int | None = None,
    options: FitOptions | None = None,
    tail_bound=multinomial_kl_tail_bound,
) -> FeasibilityResult:
    """Test the paired-score pmf (conditionally iid repeats) the same way."""
    if n_pairs is None:
        n_pairs = getattr(phat2, "count", 0)
    return feasibility_from_matrix(phat2, disc2.matrix, n_pairs, 2, options, tail_bound)


def kth_order_feasibility(
    phat_k,
    model: MeasurementModel,
    R: int,
    order: int,
    n: int,
    nodes_per_bin: int = 5,
    max_order: int = 2,
    options: FitOptions | None = None,
    tail_bound=multinomial_kl_tail_bound,
) -> FeasibilityResult:
    """Generic k-tuple test. Memory is (N+1)^order x R; raise max_order knowingly."""
    if order > max_order:
        raise ValueError(
            f"order {order} exceeds max_order {max_order}; "
            f"needs {(model.support_size + 1) ** order} x {R} matrix memory"
        )
    matrix = discretize_kth_order(model, R, order, nodes_per_bin)
    return feasibility_from_matrix(phat_k, matrix, n, order, options, tail_bound)
