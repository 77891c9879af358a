"""Reference conversions: a logit-normal latent model and raw Z-scoring.

The logit-normal baseline assumes logit(gamma) ~ Normal(beta'x, 1/lambda^2)
and maximizes a quadrature lower bound on the likelihood; both parameters
come out in closed form through the responsibility density

    r(gamma | y) = p(y | gamma) / integral p(y | gamma') dgamma'.

beta solves the normal equations against the pseudo-response
integral r(gamma|y) logit(gamma) dgamma, and lambda satisfies
1/lambda^2 = mean_i integral r(gamma|Y_i) (logit(gamma) - beta'X_i)^2 dgamma.
The fitted density can be binned so it flows through the same quantile-map
conversion machinery as the nonparametric fits.

The Z-score baseline matches marginal moments: a source score is mapped to
zhat = mu_z + (sigma_z/sigma_y)(y - mu_y) and read as a Normal(zhat,
sigma_z^2) rounded to the target range, tails absorbed into the end cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .measurement import MeasurementModel, bin_nodes, pmf_matrix
from .probcore import ScoreDistribution
from .solver import BinnedLatent

# Quadrature for integrals against logit(gamma): panels graded geometrically
# into both endpoints so the log singularity is resolved to ~1e-12.
LOGIT_EPS = 1e-10
_PANELS_PER_SIDE = 120
_NODES_PER_PANEL = 8


@lru_cache(maxsize=1)
def _logit_nodes():
    x, w = np.polynomial.legendre.leggauss(_NODES_PER_PANEL)
    left = np.geomspace(LOGIT_EPS, 0.5, _PANELS_PER_SIDE + 1)
    edges = np.concatenate([left, (1.0 - left[::-1])[1:]])
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights, np.log(nodes / (1.0 - nodes))


@lru_cache(maxsize=32)
def _logit_moments(model: MeasurementModel):
    """(I0, I1, I2)[y]: integrals of p(y|gamma) * logit(gamma)^k over gamma."""
    nodes, weights, logits = _logit_nodes()
    p = pmf_matrix(model, nodes)
    i0 = p @ weights
    i1 = p @ (weights * logits)
    i2 = p @ (weights * logits * logits)
    return i0, i1, i2


def pseudo_response(y: int, model: MeasurementModel) -> float:
    """integral r(gamma | y) logit(gamma) dgamma for one score."""
    i0, i1, _ = _logit_moments(model)
    if not 0 <= y <= model.support_size:
        raise ValueError(f"score {y} outside 0..{model.support_size}")
    if not i0[y] > 0.0:
        raise ValueError(f"score {y} has zero marginal mass under the model")
    return float(i1[y] / i0[y])


@dataclass
class LogitNormalParams:
    """Fitted logit-normal latent: logit(gamma) ~ Normal(beta'x, 1/lambda^2)."""

    beta: np.ndarray
    lam: float

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if not self.lam > 0.0:
            raise ValueError("lambda must be > 0")


def fit_logit_normal(scores, design, model: MeasurementModel) -> LogitNormalParams:
    """Closed-form maximizer of the quadrature lower bound.

    ``design`` is the n x d covariate matrix (include a constant column for
    an intercept); ``scores`` the n observed scores.
    """
    y = np.asarray(scores, dtype=np.int64)
    x = np.asarray(design, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != y.size:
        raise ValueError("design and scores must have matching length")
    if np.any(y < 0) or np.any(y > model.support_size):
        raise ValueError(f"scores must lie in 0..{model.support_size}")
    i0, i1, i2 = _logit_moments(model)
    if np.any(i0[y] <= 0.0):
        raise ValueError("a score has zero marginal mass under the model")
    t1 = i1[y] / i0[y]
    t2 = i2[y] / i0[y]
    gram = x.T @ x
    try:
        beta = np.linalg.solve(gram, x.T @ t1)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"singular design: {e}") from e
    xb = x @ beta
    mean_sq = float(np.mean(t2 - 2.0 * xb * t1 + xb * xb))
    if not mean_sq > 0.0:
        raise ValueError("degenerate fit: zero residual second moment")
    return LogitNormalParams(beta=beta, lam=mean_sq**-0.5)


def logit_normal_density(gammas, x, params: LogitNormalParams) -> np.ndarray:
    """Latent density at interior points for covariates x."""
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
    if np.any(g <= 0.0) or np.any(g >= 1.0):
        raise ValueError("density defined on the open interval (0, 1)")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    m = float(params.beta @ x)
    t = np.log(g / (1.0 - g))
    lam = params.lam
    return (lam / np.sqrt(2.0 * np.pi)) * np.exp(-0.5 * lam * lam * (t - m) ** 2) / (g * (1.0 - g))


def logit_normal_binned(
    params: LogitNormalParams, x, R: int, nodes_per_bin: int = 5
) -> BinnedLatent:
    """Bin the fitted density so it can drive the quantile-map conversion."""
    gammas, weights = bin_nodes(R, nodes_per_bin)
    dens = logit_normal_density(gammas, x, params)
    theta = (dens * weights).reshape(R, nodes_per_bin).sum(axis=1)
    total = theta.sum()
    if not total > 0.0:
        raise ValueError("binned density has no mass")
    return BinnedLatent(theta=theta / total, bins=R, mu=0.0, loglik=float("nan"))


@dataclass
class ZScoreParams:
    """Marginal moments of both instruments."""

    mean_y: float
    sd_y: float
    mean_z: float
    sd_z: float

    def __post_init__(self):
        if not (self.sd_y > 0.0 and self.sd_z > 0.0):
            raise ValueError("standard deviations must be > 0")


def fit_zscore(y_scores, z_scores) -> ZScoreParams:
    """Sample means and SDs (ddof=1) of the two score samples."""
    y = np.asarray(y_scores, dtype=np.float64)
    z = np.asarray(z_scores, dtype=np.float64)
    if y.size < 2 or z.size < 2:
        raise ValueError("need at least two scores per instrument")
    return ZScoreParams(
        mean_y=float(y.mean()),
        sd_y=float(y.std(ddof=1)),
        mean_z=float(z.mean()),
        sd_z=float(z.std(ddof=1)),
    )


def zscore_point(y, params: ZScoreParams) -> np.ndarray:
    """Deterministic moment-matched target value for source score(s) y."""
    yy = np.asarray(y, dtype=np.float64)
    return params.mean_z + (params.sd_z / params.sd_y) * (yy - params.mean_y)


def zscore_convert_pmf(y: int, params: ZScoreParams, support_size: int) -> ScoreDistribution:
    """Normal(zhat, sd_z^2) mass on unit intervals, end cells absorbing the tails.

    Cells below zhat difference the CDF and cells above difference the
    survival function, so far-tail masses keep relative accuracy instead of
    cancelling to zero against values rounded to 1.
    """
    zhat = float(zscore_point(y, params))
    edges = (np.arange(support_size) + 0.5 - zhat) / params.sd_z  # standardized cuts
    cdf_lo = np.concatenate(([0.0], ndtr(edges)))
    cdf_hi = np.concatenate((ndtr(edges), [1.0]))
    sf_lo = np.concatenate(([1.0], ndtr(-edges)))
    sf_hi = np.concatenate((ndtr(-edges), [0.0]))
    lower_edge = np.concatenate(([-np.inf], edges))
    probs = np.where(lower_edge >= 0.0, sf_lo - sf_hi, cdf_hi - cdf_lo)
    probs = np.maximum(probs, 0.0)
    return ScoreDistribution(probs)


def zscore_matrix(params: ZScoreParams, source_support: int, target_support: int) -> np.ndarray:
    """Row y is the Z-score conversion pmf p(. | y)."""
    return np.vstack(
        [zscore_convert_pmf(y, params, target_support).probs for y in range(source_support + 1)]
    )
