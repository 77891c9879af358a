"""Synthetic harmonizable data: one latent rank drives both instruments.

Each subject carries a uniform rank omega; instrument-specific traits are
beta quantiles of that shared rank (gamma = F^{-1}(omega), zeta =
G^{-1}(omega)), and scores are drawn from the instruments' measurement
models. Repeat visits redraw the score at the same trait, which is exactly
the conditional-iid structure the selection and feasibility machinery
assumes. Everything is driven by one seeded generator so reruns are
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc, betaln

from .conversion import CrosswalkRecord
from .errors import ConfigError
from .measurement import MeasurementModel, pmf_matrix, sample_scores
from .probcore import ObservationRecord
from .selection import PairedSample


def beta_quantile(u, a: float, b: float, tol: float = 1e-12) -> np.ndarray:
    """Inverse regularized incomplete beta by bracketed Newton/bisection.

    Guarantees |I_x(a, b) - u| <= tol at the returned x (endpoints exact).
    """
    if not (a > 0 and b > 0):
        raise ValueError("beta parameters must be > 0")
    uu = np.asarray(u, dtype=np.float64)
    scalar = uu.ndim == 0
    uu = np.atleast_1d(uu).copy()
    if np.any(uu < 0.0) or np.any(uu > 1.0):
        raise ValueError("quantile levels must lie in [0, 1]")

    x = np.clip(uu, 1e-12, 1.0 - 1e-12)
    lo = np.zeros_like(uu)
    hi = np.ones_like(uu)
    log_norm = betaln(a, b)
    done = (uu == 0.0) | (uu == 1.0)
    x[uu == 0.0] = 0.0
    x[uu == 1.0] = 1.0
    for _ in range(200):
        if np.all(done):
            break
        act = ~done
        xa = x[act]
        f = betainc(a, b, xa) - uu[act]
        hit = np.abs(f) <= tol
        # tighten brackets around the root
        la, ha = lo[act], hi[act]
        la = np.where(f < 0.0, xa, la)
        ha = np.where(f > 0.0, xa, ha)
        lo[act], hi[act] = la, ha
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            pdf = np.exp((a - 1.0) * np.log(xa) + (b - 1.0) * np.log1p(-xa) - log_norm)
            step = xa - f / pdf
        good = np.isfinite(step) & (step > la) & (step < ha)
        nxt = np.where(good, step, 0.5 * (la + ha))
        x[act] = np.where(hit, xa, nxt)
        idx = np.flatnonzero(act)
        done[idx[hit]] = True
    if scalar:
        return float(x[0])
    return x


@dataclass
class SimulationConfig:
    """Ground truth for synthetic experiments.

    Defaults follow the benchmarked setup: traits Beta(12,5) and Beta(6,6)
    on shared ranks, a Gaussian h=2 source instrument and a Laplace h=1
    target instrument on {0..30}, 100 single-visit subjects plus 100
    repeat-visit pairs per instrument.
    """

    model_y: MeasurementModel = field(
        default_factory=lambda: MeasurementModel("gaussian", 30, 2.0)
    )
    model_z: MeasurementModel = field(
        default_factory=lambda: MeasurementModel("laplace", 30, 1.0)
    )
    beta_y: tuple = (12.0, 5.0)
    beta_z: tuple = (6.0, 6.0)
    n_y: int = 100
    n_z: int = 100
    n_pairs_y: int = 100
    n_pairs_z: int = 100
    n_crosswalk: int = 0
    test_y: str = "Y"
    test_z: str = "Z"
    group: str = "all"
    age: float = 70.0

    def __post_init__(self):
        for name in ("n_y", "n_z", "n_pairs_y", "n_pairs_z", "n_crosswalk"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("beta_y", "beta_z"):
            pair = tuple(float(v) for v in getattr(self, name))
            if len(pair) != 2 or not all(v > 0 for v in pair):
                raise ConfigError(f"{name} must be two positive shape parameters")
            setattr(self, name, pair)

    def to_dict(self) -> dict:
        return {
            "model_y": json.loads(self.model_y.to_json()),
            "model_z": json.loads(self.model_z.to_json()),
            "beta_y": list(self.beta_y),
            "beta_z": list(self.beta_z),
            "n_y": self.n_y,
            "n_z": self.n_z,
            "n_pairs_y": self.n_pairs_y,
            "n_pairs_z": self.n_pairs_z,
            "n_crosswalk": self.n_crosswalk,
            "test_y": self.test_y,
            "test_z": self.test_z,
            "group": self.group,
            "age": self.age,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        known = {
            "model_y", "model_z", "beta_y", "beta_z", "n_y", "n_z",
            "n_pairs_y", "n_pairs_z", "n_crosswalk", "test_y", "test_z",
            "group", "age",
        }
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown simulation keys: {sorted(extra)}")
        try:
            for key in ("model_y", "model_z"):
                if key in d:
                    d[key] = MeasurementModel.from_dict(d[key])
            for key in ("beta_y", "beta_z"):
                if key in d:
                    d[key] = tuple(d[key])
            return cls(**d)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad simulation config: {e}") from e


def config_hash(config: dict) -> str:
    """Short stable digest of a canonicalized config mapping."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


@dataclass
class SimulatedData:
    """One synthetic draw: records per instrument, repeat pairs, crosswalk."""

    config: SimulationConfig
    records_y: list
    records_z: list
    pairs_y: PairedSample
    pairs_z: PairedSample
    crosswalk: list

    def all_records(self) -> list:
        """Single-visit and pair-visit records merged, for CSV export."""
        out = list(self.records_y) + list(self.records_z)
        cfg = self.config
        for prefix, pairs, test in (
            ("py", self.pairs_y, cfg.test_y),
            ("pz", self.pairs_z, cfg.test_z),
        ):
            for i in range(pairs.n):
                sid = f"{prefix}{i:05d}"
                out.append(ObservationRecord(sid, 1, test, int(pairs.y1[i]), cfg.age, cfg.group))
                out.append(ObservationRecord(sid, 2, test, int(pairs.y2[i]), cfg.age, cfg.group))
        return out


def _branch_records(prefix, test, model, shapes, n, cfg, rng):
    omega = rng.random(n)
    gamma = beta_quantile(omega, *shapes)
    scores = sample_scores(model, gamma, rng) if n else np.empty(0, dtype=np.int64)
    return [
        ObservationRecord(f"{prefix}{i:05d}", 1, test, int(scores[i]), cfg.age, cfg.group)
        for i in range(n)
    ]


def _branch_pairs(model, shapes, n, cfg, rng) -> PairedSample:
    omega = rng.random(n)
    gamma = beta_quantile(omega, *shapes)
    if n:
        y1 = sample_scores(model, gamma, rng)
        y2 = sample_scores(model, gamma, rng)
    else:
        y1 = y2 = np.empty(0, dtype=np.int64)
    return PairedSample(y1=y1, y2=y2, age=np.full(n, cfg.age), group=[cfg.group] * n)


def simulate_harmonizable(config: SimulationConfig, rng: np.random.Generator) -> SimulatedData:
    """Draw one dataset; consumption order of the rng stream is fixed."""
    cfg = config
    records_y = _branch_records("y", cfg.test_y, cfg.model_y, cfg.beta_y, cfg.n_y, cfg, rng)
    pairs_y = _branch_pairs(cfg.model_y, cfg.beta_y, cfg.n_pairs_y, cfg, rng)
    records_z = _branch_records("z", cfg.test_z, cfg.model_z, cfg.beta_z, cfg.n_z, cfg, rng)
    pairs_z = _branch_pairs(cfg.model_z, cfg.beta_z, cfg.n_pairs_z, cfg, rng)
    crosswalk = []
    if cfg.n_crosswalk:
        omega = rng.random(cfg.n_crosswalk)
        gamma = beta_quantile(omega, *cfg.beta_y)
        zeta = beta_quantile(omega, *cfg.beta_z)
        ys = sample_scores(cfg.model_y, gamma, rng)
        zs = sample_scores(cfg.model_z, zeta, rng)
        crosswalk = [
            CrosswalkRecord(f"x{i:05d}", int(ys[i]), int(zs[i]), cfg.age, cfg.group)
            for i in range(cfg.n_crosswalk)
        ]
    return SimulatedData(
        config=cfg,
        records_y=records_y,
        records_z=records_z,
        pairs_y=pairs_y,
        pairs_z=pairs_z,
        crosswalk=crosswalk,
    )


def true_joint(config: SimulationConfig, nodes: int = 10_000) -> np.ndarray:
    """Population joint pmf p0(y, z) = integral over the shared rank omega."""
    from .measurement import bin_nodes  # local import keeps module load light

    q = 5
    panels = max(1, nodes // q)
    omega, weights = bin_nodes(panels, q)
    gamma = beta_quantile(omega, *config.beta_y)
    zeta = beta_quantile(omega, *config.beta_z)
    py = pmf_matrix(config.model_y, gamma)
    pz = pmf_matrix(config.model_z, zeta)
    return np.einsum("in,jn,n->ij", py, pz, weights, optimize=True)
