"""Discrete measurement kernel models on a bounded score range.

A measurement model ties a latent trait ``gamma`` in [0, 1] to an integer
score ``y`` in {0, ..., N}. Kernel families put
``p(y | gamma) proportional to K((y - N*gamma) / h)`` with the constant fixed
by normalizing over the score range; the binomial family uses
``Binomial(N, gamma)`` directly and takes no bandwidth.

Discretization partitions [0, 1] into R equal bins and integrates the
score pmf over each bin with fixed-node Gauss-Legendre quadrature, giving
the (N+1) x R matrix that the latent solver consumes. A second-order
variant integrates the product pmf of two conditionally independent
scores and is indexed row-major by (y1, y2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import binom

KERNEL_FAMILIES = ("gaussian", "laplace", "epanechnikov", "triangular")
FAMILIES = KERNEL_FAMILIES + ("binomial",)

DEFAULT_NODES_PER_BIN = 5


@dataclass(frozen=True)
class MeasurementModel:
    """Score model: kernel family (with bandwidth) or binomial, on {0..N}."""

    family: str
    support_size: int
    bandwidth: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if int(self.support_size) != self.support_size or self.support_size < 1:
            raise ValueError(f"support_size must be an integer >= 1, got {self.support_size}")
        object.__setattr__(self, "support_size", int(self.support_size))
        if self.family == "binomial":
            if self.bandwidth is not None:
                raise ValueError("binomial family takes no bandwidth")
        else:
            if self.bandwidth is None or not self.bandwidth > 0:
                raise ValueError(f"{self.family} family needs bandwidth > 0, got {self.bandwidth}")
            object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def n_scores(self) -> int:
        return self.support_size + 1

    def to_json(self) -> str:
        d: dict = {"family": self.family, "N": self.support_size}
        if self.bandwidth is not None:
            d["h"] = self.bandwidth
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MeasurementModel":
        d = json.loads(text)
        return cls.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementModel":
        extra = set(d) - {"family", "N", "h"}
        if extra:
            raise ValueError(f"unknown model keys: {sorted(extra)}")
        return cls(family=d["family"], support_size=d["N"], bandwidth=d.get("h"))

    def label(self) -> str:
        if self.bandwidth is None:
            return self.family
        return f"{self.family}(h={self.bandwidth:g})"


def pmf_matrix(model: MeasurementModel, gammas) -> np.ndarray:
    """Score pmfs for many latent values at once; column j is p(. | gammas[j]).

    Kernel families are normalized in a shifted log domain so that columns
    stay valid even when every unshifted kernel value underflows. If a
    compact-support kernel vanishes at every score (bandwidth below the
    score spacing), the column falls back to a point mass at the integer
    nearest N*gamma.
    """
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
    if g.ndim != 1:
        raise ValueError("gammas must be a scalar or 1-d array")
    if np.any(g < 0.0) or np.any(g > 1.0):
        raise ValueError("latent values must lie in [0, 1]")
    n = model.support_size
    y = np.arange(n + 1, dtype=np.float64)

    if model.family == "binomial":
        out = binom.pmf(y[:, None], n, g[None, :])
        return np.ascontiguousarray(out)

    u = (y[:, None] - n * g[None, :]) / model.bandwidth
    if model.family == "gaussian":
        logk = -0.5 * u * u
    elif model.family == "laplace":
        logk = -np.abs(u)
    else:
        if model.family == "epanechnikov":
            k = np.maximum(1.0 - u * u, 0.0)
        else:  # triangular
            k = np.maximum(1.0 - np.abs(u), 0.0)
        sums = k.sum(axis=0)
        dead = sums == 0.0
        if np.any(dead):
            k = k.copy()
            nearest = np.clip(np.floor(n * g[dead] + 0.5).astype(np.int64), 0, n)
            k[:, dead] = 0.0
            k[nearest, np.flatnonzero(dead)] = 1.0
            sums = k.sum(axis=0)
        return k / sums

    logk -= logk.max(axis=0)
    k = np.exp(logk)
    return k / k.sum(axis=0)


def pmf(model: MeasurementModel, gamma: float) -> np.ndarray:
    """Score pmf over {0..N} for one latent value."""
    return pmf_matrix(model, [gamma])[:, 0]


def sample_score(model: MeasurementModel, gamma: float, rng: np.random.Generator) -> int:
    """Draw one score from p(. | gamma)."""
    return int(sample_scores(model, [gamma], rng)[0])


def sample_scores(model: MeasurementModel, gammas, rng: np.random.Generator) -> np.ndarray:
    """Draw one score per latent value, by inverse-cdf on each column."""
    p = pmf_matrix(model, gammas)
    cdf = np.cumsum(p, axis=0)
    u = rng.random(p.shape[1])
    ys = (cdf < u[None, :]).sum(axis=0)
    return np.minimum(ys, model.support_size).astype(np.int64)


@lru_cache(maxsize=64)
def _gauss_legendre(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    return x, w


def bin_nodes(R: int, nodes_per_bin: int):
    """Gauss-Legendre nodes/weights for every bin of the uniform R-partition.

    Returns (gammas, weights) with shape (R*nodes_per_bin,), bin-major;
    weights within one bin sum to the bin width 1/R.
    """
    if R < 1:
        raise ValueError(f"bins must be >= 1, got {R}")
    if nodes_per_bin < 1:
        raise ValueError(f"nodes_per_bin must be >= 1, got {nodes_per_bin}")
    x, w = _gauss_legendre(nodes_per_bin)
    starts = np.arange(R, dtype=np.float64) / R
    gammas = (starts[:, None] + (x[None, :] + 1.0) / (2.0 * R)).ravel()
    weights = np.tile(w / (2.0 * R), R)
    return gammas, weights


@dataclass
class DiscretizedModel:
    """Bin-integrated score model: matrix[y, r] = integral of p(y|gamma) over bin r."""

    model: MeasurementModel
    bins: int
    nodes_per_bin: int
    matrix: np.ndarray

    @property
    def n_scores(self) -> int:
        return self.model.n_scores


@dataclass
class SecondOrderModel:
    """Bin-integrated product model over score pairs, rows indexed y1*(N+1)+y2."""

    model: MeasurementModel
    bins: int
    nodes_per_bin: int
    matrix: np.ndarray

    @property
    def n_scores(self) -> int:
        return self.model.n_scores


def discretize(
    model: MeasurementModel, R: int, nodes_per_bin: int = DEFAULT_NODES_PER_BIN
) -> DiscretizedModel:
    """First-order discretization; columns sum to 1/R."""
    gammas, weights = bin_nodes(R, nodes_per_bin)
    p = pmf_matrix(model, gammas)
    a = p.reshape(model.n_scores, R, nodes_per_bin) @ (
        weights[:nodes_per_bin]
    )
    return DiscretizedModel(model=model, bins=R, nodes_per_bin=nodes_per_bin, matrix=a)


def discretize_second_order(
    model: MeasurementModel, R: int, nodes_per_bin: int = DEFAULT_NODES_PER_BIN
) -> SecondOrderModel:
    """Second-order discretization for conditionally iid score pairs."""
    gammas, weights = bin_nodes(R, nodes_per_bin)
    s = model.n_scores
    p = pmf_matrix(model, gammas).reshape(s, R, nodes_per_bin)
    a2 = np.einsum("irq,jrq,q->ijr", p, p, weights[:nodes_per_bin], optimize=True)
    return SecondOrderModel(
        model=model, bins=R, nodes_per_bin=nodes_per_bin, matrix=a2.reshape(s * s, R)
    )


def discretize_kth_order(
    model: MeasurementModel, R: int, order: int, nodes_per_bin: int = DEFAULT_NODES_PER_BIN
) -> np.ndarray:
    """General k-fold product discretization, rows in row-major multi-index order.

    Memory grows as (N+1)^order x R; callers should keep order small. Orders
    1 and 2 delegate to the specialized routines.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if order == 1:
        return discretize(model, R, nodes_per_bin).matrix
    if order == 2:
        return discretize_second_order(model, R, nodes_per_bin).matrix
    gammas, weights = bin_nodes(R, nodes_per_bin)
    s = model.n_scores
    p = pmf_matrix(model, gammas).reshape(s, R, nodes_per_bin)
    wq = weights[:nodes_per_bin]
    out = np.empty((s**order, R), dtype=np.float64)
    for r in range(R):
        cur = p[:, r, :]
        for _ in range(order - 1):
            cur = (cur[:, None, :] * p[None, :, r, :]).reshape(-1, nodes_per_bin)
        out[:, r] = cur @ wq
    return out
