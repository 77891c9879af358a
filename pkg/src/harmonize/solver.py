"""Regularized nonparametric estimation of a binned latent-trait density.

The latent density is piecewise constant on R equal bins of [0, 1] and is
represented by the bin-mass vector theta on the simplex (density R*theta_r
on bin r). Given a discretized measurement model A and an observed score
pmf phat, the fit maximizes

    sum_y phat_y * log((A theta)_y) + (mu / R) * sum_r log(R * theta_r),

which blends the multinomial log-likelihood of the implied score marginal
with a uniform-prior penalty of weight mu. Two solvers are provided: the
EM-style fixed-point iteration (default) and an exponentiated-gradient
mirror ascent used as an independent cross-check; both live in
harmonize._kernels with numba and numpy builds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from ._backend import active_backend
from .errors import DegenerateModelError
from .measurement import DiscretizedModel, SecondOrderModel
from .probcore import (
    CovariateCell,
    ObservationRecord,
    ScoreDistribution,
    as_probs,
    conditional_empirical,
)

SOLVERS = ("em_fixed_point", "mirror_ascent")

DEFAULT_MAX_ITERS = 100_000
DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class FitOptions:
    """Solver knobs: algorithm, iteration budget, stopping rule, start point."""

    solver: str = "em_fixed_point"
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    init_theta: np.ndarray | None = None
    marginal_floor: float = 0.0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0.0:
            raise ValueError("tol must be > 0")
        if self.marginal_floor < 0.0:
            raise ValueError("marginal_floor must be >= 0")


@dataclass
class BinnedLatent:
    """A fitted binned latent density plus fit metadata."""

    theta: np.ndarray
    bins: int
    mu: float
    loglik: float
    iterations: int = 0
    converged: bool = True
    final_gain: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=np.float64)
        if t.ndim != 1 or t.size != self.bins:
            raise ValueError(f"theta must have length bins={self.bins}")
        if np.any(t < 0.0):
            raise ValueError("theta must be nonnegative")
        s = t.sum()
        if abs(s - 1.0) > 1e-10:
            raise ValueError(f"theta sums to {s!r}, not 1")
        self.theta = t

    def density(self) -> np.ndarray:
        """Latent density value on each bin (R * theta)."""
        return self.bins * self.theta

    def to_json(self) -> str:
        return json.dumps(
            {
                "R": self.bins,
                "mu": self.mu,
                "theta": self.theta.tolist(),
                "loglik": self.loglik,
                "iterations": self.iterations,
                "converged": self.converged,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "BinnedLatent":
        d = json.loads(text)
        return cls(
            theta=np.asarray(d["theta"], dtype=np.float64),
            bins=int(d["R"]),
            mu=float(d["mu"]),
            loglik=float(d["loglik"]),
            iterations=int(d.get("iterations", 0)),
            converged=bool(d.get("converged", True)),
        )


def _matrix_of(disc) -> np.ndarray:
    if isinstance(disc, (DiscretizedModel, SecondOrderModel)):
        return disc.matrix
    return np.asarray(disc, dtype=np.float64)


def regularized_loglik(theta, disc, phat, mu: float) -> float:
    """Objective value; -inf when a needed marginal or (for mu>0) a bin is empty."""
    a = _matrix_of(disc)
    t = np.asarray(theta, dtype=np.float64)
    p = as_probs(phat)
    if p.size != a.shape[0] or t.size != a.shape[1]:
        raise ValueError("shape mismatch between theta, matrix, and phat")
    if mu < 0.0:
        raise ValueError("mu must be >= 0")
    m = a @ t
    mask = p > 0.0
    if np.any(m[mask] <= 0.0):
        return float("-inf")
    val = float(p[mask] @ np.log(m[mask]))
    if mu > 0.0:
        if np.any(t <= 0.0):
            return float("-inf")
        r = t.size
        val += (mu / r) * float(np.sum(np.log(r * t)))
    return val


def em_step(theta, disc, phat, mu: float) -> np.ndarray:
    """One fixed-point update; preserves the simplex and enforces the mass floor.

    theta'_r = theta_r * sum_y phat_y A_yr / (A theta)_y / (1+mu) + mu/((1+mu)R).
    """
    a = _matrix_of(disc)
    t = np.asarray(theta, dtype=np.float64)
    p = as_probs(phat)
    if p.size != a.shape[0] or t.size != a.shape[1]:
        raise ValueError("shape mismatch between theta, matrix, and phat")
    if mu < 0.0:
        raise ValueError("mu must be >= 0")
    r = t.size
    m = a @ t
    mask = p > 0.0
    if np.any(m[mask] <= 0.0):
        raise DegenerateModelError("implied marginal vanishes on observed scores")
    ratio = np.zeros_like(p)
    ratio[mask] = p[mask] / m[mask]
    return (t * (a.T @ ratio)) / (1.0 + mu) + mu / ((1.0 + mu) * r)


def _prepare_init(init_theta, bins: int) -> np.ndarray:
    if init_theta is None:
        return np.full(bins, 1.0 / bins)
    t = np.asarray(init_theta, dtype=np.float64)
    if t.ndim != 1 or t.size != bins:
        raise ValueError(f"init_theta must have length {bins}")
    if np.any(t < 0.0):
        raise ValueError("init_theta must be nonnegative")
    if abs(t.sum() - 1.0) > 1e-9:
        raise ValueError("init_theta must sum to 1")
    return t.copy()


def fit(disc, phat, mu: float, options: FitOptions | None = None) -> BinnedLatent:
    """Maximize the regularized objective; returns the fitted binned latent.

    The matrix is sliced to score rows with positive empirical mass before
    entering the hot loop (zero-mass rows contribute nothing to either the
    objective or the update).
    """
    opts = options or FitOptions()
    a = _matrix_of(disc)
    p = as_probs(phat)
    if p.size != a.shape[0]:
        raise ValueError(f"phat has {p.size} entries but matrix has {a.shape[0]} rows")
    if mu < 0.0:
        raise ValueError("mu must be >= 0")
    bins = a.shape[1]
    theta0 = _prepare_init(opts.init_theta, bins)

    support = p > 0.0
    a_s = np.ascontiguousarray(a[support])
    at_s = np.ascontiguousarray(a_s.T)
    p_s = np.ascontiguousarray(p[support])

    theta, obj, iters, converged, gain, status = _kernels.run_fit(
        opts.solver,
        active_backend(),
        a_s,
        at_s,
        p_s,
        mu,
        theta0,
        opts.max_iters,
        opts.tol,
        opts.marginal_floor,
    )
    if status == _kernels.STATUS_DEGENERATE:
        if iters == 0:
            raise DegenerateModelError("objective not finite at initialization")
        raise DegenerateModelError("implied marginal vanished on observed scores mid-fit")
    return BinnedLatent(
        theta=theta,
        bins=bins,
        mu=mu,
        loglik=float(obj),
        iterations=int(iters),
        converged=bool(converged),
        final_gain=float(gain),
    )


def fit_second_order(disc2: SecondOrderModel, phat2, mu: float, options: FitOptions | None = None) -> BinnedLatent:
    """Fit against the paired-score empirical pmf (rows flattened row-major)."""
    return fit(disc2, phat2, mu, options)


def implied_marginal(latent, disc) -> ScoreDistribution:
    """Score pmf implied by a binned latent: R * (A theta), renormalized of round-off."""
    t = latent.theta if isinstance(latent, BinnedLatent) else np.asarray(latent, dtype=np.float64)
    a = _matrix_of(disc)
    if t.size != a.shape[1]:
        raise ValueError("theta length does not match matrix columns")
    v = a.shape[1] * (a @ t)
    total = v.sum()
    if not total > 0.0:
        raise DegenerateModelError("implied marginal has no mass")
    return ScoreDistribution(v / total)


def contraction_diagnostic(theta0, disc, phat, steps: int) -> np.ndarray:
    """1-norm error of the implied marginal along unregularized EM iterates.

    Returns errors[t] = || R*(A theta_t) - phat ||_1 for t = 0..steps.
    """
    a = _matrix_of(disc)
    p = as_probs(phat)
    t = np.asarray(theta0, dtype=np.float64)
    bins = a.shape[1]
    errs = np.empty(steps + 1)
    for i in range(steps + 1):
        errs[i] = np.abs(bins * (a @ t) - p).sum()
        if i < steps:
            t = em_step(t, a, p, 0.0)
    return errs


def fit_per_cell(
    records: Iterable[ObservationRecord],
    disc: DiscretizedModel,
    mu: float,
    cells: Sequence[CovariateCell] | None = None,
    options: FitOptions | None = None,
) -> dict:
    """One independent fit per covariate cell (key None for the trivial scheme)."""
    records = list(records)
    out = {}
    for cell in cells if cells is not None else [None]:
        phat = conditional_empirical(records, cell, disc.model.support_size)
        key = cell.key() if cell is not None else None
        out[key] = fit(disc, phat, mu, options)
    return out
