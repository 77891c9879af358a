"""Score conversion between two instruments through the shared latent scale.

A binned latent density induces a piecewise-linear CDF on [0, 1]; the
conversion map between two instruments is phi(q) = G^{-1}(F(q)) built from
the source and target latent CDFs (generalized inverse: flat segments
resolve to their left endpoint). Converting an observed source score y
averages the target score pmf over the posterior of the latent given y,
transported through phi:

    p(z | y) = sum_r w_r(y) * avg_{gamma in bin r} p_target(z | phi(gamma)),

with w_r(y) proportional to A_yr * theta_r and the within-bin average taken
at the same Gauss-Legendre nodes the discretization used. The sampler
draws a bin from w, a latent uniformly inside the bin, and a target score
from the transported pmf.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateModelError
from .measurement import DiscretizedModel, bin_nodes, pmf_matrix
from .probcore import CovariateCell, ScoreDistribution, assign_cell
from .solver import BinnedLatent


@dataclass
class PiecewiseLinearCDF:
    """CDF that is linear between breakpoints; built from bin masses."""

    breaks: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if b.ndim != 1 or b.size < 2 or b.shape != v.shape:
            raise ValueError("breaks and values must be matching 1-d arrays, length >= 2")
        if np.any(np.diff(b) <= 0.0):
            raise ValueError("breaks must be strictly increasing")
        if np.any(np.diff(v) < 0.0):
            raise ValueError("values must be nondecreasing")
        if v[0] != 0.0 or v[-1] != 1.0:
            raise ValueError("values must run from 0 to 1")
        self.breaks = b
        self.values = v

    def evaluate(self, q):
        """F(q); accepts scalars or arrays in [breaks[0], breaks[-1]]."""
        qq = np.asarray(q, dtype=np.float64)
        if np.any(qq < self.breaks[0]) or np.any(qq > self.breaks[-1]):
            raise ValueError("evaluation point outside the CDF domain")
        return np.interp(qq, self.breaks, self.values)

    def inverse(self, u):
        """Generalized inverse inf{q : F(q) >= u}; flat segments give their left endpoint."""
        uu = np.asarray(u, dtype=np.float64)
        scalar = uu.ndim == 0
        uu = np.atleast_1d(uu)
        if np.any(uu < 0.0) or np.any(uu > 1.0):
            raise ValueError("probability levels must lie in [0, 1]")
        idx = np.searchsorted(self.values, uu, side="left")
        idx = np.minimum(idx, self.values.size - 1)
        out = np.empty_like(uu)
        exact = self.values[idx] == uu
        out[exact] = self.breaks[idx[exact]]
        rest = ~exact
        if np.any(rest):
            j = idx[rest]
            dv = self.values[j] - self.values[j - 1]
            frac = (uu[rest] - self.values[j - 1]) / dv
            out[rest] = self.breaks[j - 1] + frac * (self.breaks[j] - self.breaks[j - 1])
        out = np.clip(out, self.breaks[0], self.breaks[-1])
        return float(out[0]) if scalar else out


def build_cdf(latent) -> PiecewiseLinearCDF:
    """Piecewise-linear CDF of a binned latent (BinnedLatent or bin-mass vector)."""
    theta = latent.theta if isinstance(latent, BinnedLatent) else np.asarray(latent, dtype=np.float64)
    bins = theta.size
    values = np.concatenate(([0.0], np.cumsum(theta)))
    # absorb cumsum round-off: clip overshoot, pin the endpoint
    values = np.minimum(values, 1.0)
    values[-1] = 1.0
    breaks = np.arange(bins + 1, dtype=np.float64) / bins
    return PiecewiseLinearCDF(breaks=breaks, values=values)


@dataclass
class QuantileMap:
    """Latent-scale transport phi(q) = G^{-1}(F(q)) from source CDF F to target CDF G."""

    source: PiecewiseLinearCDF
    target: PiecewiseLinearCDF

    def __call__(self, q):
        return self.target.inverse(self.source.evaluate(q))


def quantile_map(source_latent, target_latent) -> QuantileMap:
    """Build the conversion map between two fitted binned latents."""
    return QuantileMap(source=build_cdf(source_latent), target=build_cdf(target_latent))


def posterior_gamma(y: int, latent: BinnedLatent, disc: DiscretizedModel) -> np.ndarray:
    """Posterior bin weights of the latent given one observed score."""
    a = disc.matrix
    if not 0 <= y < a.shape[0]:
        raise ValueError(f"score {y} outside 0..{a.shape[0] - 1}")
    w = a[y, :] * latent.theta
    total = w.sum()
    if not total > 0.0:
        raise DegenerateModelError(f"score {y} has zero probability under the fitted model")
    return w / total


@dataclass
class FittedBranch:
    """One instrument: its discretized model and per-cell fitted latents."""

    disc: DiscretizedModel
    latents: dict

    @property
    def n_scores(self) -> int:
        return self.disc.n_scores


@dataclass
class ConversionModel:
    """Everything needed to convert source scores into target-score pmfs."""

    source: FittedBranch
    target: FittedBranch
    cells: Sequence[CovariateCell] | None = None

    def __post_init__(self):
        if set(self.source.latents) != set(self.target.latents):
            raise ValueError("source and target branches must cover the same covariate cells")

    def cell_key(self, group: str, age: float):
        cell = assign_cell(self.cells, group, age)
        return None if cell is None else cell.key()


def _as_cell_key(cell):
    if cell is None or isinstance(cell, tuple):
        return cell
    if isinstance(cell, CovariateCell):
        return cell.key()
    raise TypeError(f"cell must be None, a CovariateCell, or a key tuple, got {type(cell)}")


def _bin_average_target_pmf(model: ConversionModel, key) -> np.ndarray:
    """Matrix M[z, r] = within-bin average of p_target(z | phi(gamma)) on source bin r."""
    src, tgt = model.source, model.target
    qmap = quantile_map(src.latents[key], tgt.latents[key])
    bins, q = src.disc.bins, src.disc.nodes_per_bin
    gammas, weights = bin_nodes(bins, q)
    zeta = qmap(gammas)
    p = pmf_matrix(tgt.disc.model, zeta)
    # GL weights sum to 1/R per bin; scale by R to make each bin a unit average
    return p.reshape(tgt.n_scores, bins, q) @ (weights[:q] * bins)


def convert_pmf(y: int, cell, model: ConversionModel) -> ScoreDistribution:
    """Target-score pmf given one source score and its covariate cell."""
    key = _as_cell_key(cell)
    w = posterior_gamma(y, model.source.latents[key], model.source.disc)
    m = _bin_average_target_pmf(model, key)
    return ScoreDistribution(m @ w)


def conversion_matrix(model: ConversionModel, cell=None) -> np.ndarray:
    """All conversions at once: row y is the target pmf p(. | y) for that cell."""
    key = _as_cell_key(cell)
    src = model.source
    lat = src.latents[key]
    m = _bin_average_target_pmf(model, key)
    w = src.disc.matrix * lat.theta[None, :]
    totals = w.sum(axis=1)
    if np.any(totals <= 0.0):
        bad = int(np.flatnonzero(totals <= 0.0)[0])
        raise DegenerateModelError(f"score {bad} has zero probability under the fitted model")
    return (m @ (w / totals[:, None]).T).T


def conversion_sample(
    y: int, cell, model: ConversionModel, draws: int, rng: np.random.Generator
) -> np.ndarray:
    """Sample target scores given a source score: bin from the posterior,
    latent uniform within the bin, target score from the transported pmf."""
    key = _as_cell_key(cell)
    src, tgt = model.source, model.target
    w = posterior_gamma(y, src.latents[key], src.disc)
    qmap = quantile_map(src.latents[key], tgt.latents[key])
    bins = rng.choice(src.disc.bins, size=draws, p=w)
    gammas = (bins + rng.random(draws)) / src.disc.bins
    zeta = qmap(gammas)
    p = pmf_matrix(tgt.disc.model, zeta)
    cdf = np.cumsum(p, axis=0)
    u = rng.random(draws)
    zs = (cdf < u[None, :]).sum(axis=0)
    return np.minimum(zs, tgt.disc.model.support_size).astype(np.int64)


@dataclass(frozen=True)
class CrosswalkRecord:
    """One subject observed on both instruments (used to score conversions)."""

    subject_id: str
    y: int
    z: int
    age: float = 0.0
    group: str = ""


@dataclass
class CrossEntropyResult:
    """Sample cross entropy with per-record zero-probability diagnostics."""

    value: float
    count: int
    zero_records: list = field(default_factory=list)


def sample_cross_entropy(records: Sequence[CrosswalkRecord], model: ConversionModel) -> CrossEntropyResult:
    """-sum_i log p(z_i | y_i, cell_i) under the conversion model."""
    matrices: dict = {}
    total = 0.0
    zeros = []
    for rec in records:
        key = model.cell_key(rec.group, rec.age)
        if key not in matrices:
            matrices[key] = conversion_matrix(model, key)
        p = matrices[key][rec.y, rec.z]
        if p <= 0.0:
            zeros.append(rec)
        else:
            total -= float(np.log(p))
    if zeros:
        return CrossEntropyResult(value=float("inf"), count=len(records), zero_records=zeros)
    return CrossEntropyResult(value=total, count=len(records))


def conditional_from_joint(joint: np.ndarray) -> np.ndarray:
    """Rows of p(z | y) from a joint table; zero-mass rows stay zero."""
    j = np.asarray(joint, dtype=np.float64)
    row = j.sum(axis=1, keepdims=True)
    out = np.zeros_like(j)
    np.divide(j, row, out=out, where=row > 0.0)
    return out


def population_cross_entropy(joint_truth: np.ndarray, conditional_estimate: np.ndarray) -> float:
    """sum_{y,z} -p0(y,z) * log phat(z|y); +inf if the estimate misses truth support."""
    p0 = np.asarray(joint_truth, dtype=np.float64)
    est = np.asarray(conditional_estimate, dtype=np.float64)
    if p0.shape != est.shape:
        raise ValueError(f"shape mismatch: {p0.shape} vs {est.shape}")
    mask = p0 > 0.0
    if np.any(est[mask] <= 0.0):
        return float("inf")
    return float(-np.sum(p0[mask] * np.log(est[mask])))
