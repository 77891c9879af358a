"""Distributions over score ranges, observation records, and shared numerics.

Everything downstream works with pmf vectors over {0..N} (or over score
pairs flattened row-major as y1*(N+1)+y2). This module holds that vector
type, the longitudinal record/covariate-cell plumbing with its CSV codec,
and the divergence/tail-probability helpers used by the diagnostics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaincc

from .errors import DataError, NoDataError

SIMPLEX_ATOL = 1e-12

RECORD_COLUMNS = ("subject_id", "visit", "test_id", "score", "age", "group")


def as_probs(dist) -> np.ndarray:
    """Accept a ScoreDistribution or raw array; return the pmf vector."""
    if isinstance(dist, ScoreDistribution):
        return dist.probs
    return np.asarray(dist, dtype=np.float64)


@dataclass
class ScoreDistribution:
    """A pmf over a finite score range, with the sample count behind it (0 = exact)."""

    probs: np.ndarray
    count: int = 0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a nonempty 1-d vector")
        if np.any(p < 0.0):
            raise ValueError("probabilities must be nonnegative")
        total = p.sum()
        if abs(total - 1.0) > SIMPLEX_ATOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        self.probs = p
        self.count = int(self.count)

    @property
    def n_scores(self) -> int:
        return self.probs.size


def empirical(scores, support_size: int) -> ScoreDistribution:
    """Normalized score counts over {0..support_size}."""
    s = np.asarray(scores)
    if s.size == 0:
        raise ValueError("no scores given")
    if not np.issubdtype(s.dtype, np.integer):
        si = s.astype(np.int64)
        if np.any(si != s):
            raise ValueError("scores must be integers")
        s = si
    if np.any(s < 0) or np.any(s > support_size):
        raise ValueError(f"scores must lie in 0..{support_size}")
    counts = np.bincount(s, minlength=support_size + 1).astype(np.float64)
    return ScoreDistribution(counts / s.size, count=int(s.size))


def paired_empirical(y1, y2, support_size: int) -> ScoreDistribution:
    """Empirical pmf of score pairs, flattened row-major as y1*(N+1)+y2."""
    a = np.asarray(y1, dtype=np.int64)
    b = np.asarray(y2, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError("paired score arrays must have equal length")
    for arr in (a, b):
        if arr.size and (arr.min() < 0 or arr.max() > support_size):
            raise ValueError(f"scores must lie in 0..{support_size}")
    return empirical(a * (support_size + 1) + b, (support_size + 1) ** 2 - 1)


def flatten_pair_index(y1, y2, support_size: int):
    """Row-major flat index of the pair (y1, y2)."""
    return np.asarray(y1) * (support_size + 1) + np.asarray(y2)


# ---- Longitudinal records and covariate cells ----


@dataclass(frozen=True)
class ObservationRecord:
    """One scored visit of one subject on one instrument."""

    subject_id: str
    visit: int
    test_id: str
    score: int
    age: float
    group: str


@dataclass(frozen=True)
class CovariateCell:
    """A stratum: exact group match plus an age window |age - center| <= half_width."""

    group: str
    age_center: float
    half_width: float

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")

    def contains(self, group: str, age: float) -> bool:
        return group == self.group and abs(age - self.age_center) <= self.half_width

    def key(self) -> tuple:
        return (self.group, self.age_center, self.half_width)

    def label(self) -> str:
        return f"{self.group}@{self.age_center:g}±{self.half_width:g}"


def assign_cell(cells: Sequence[CovariateCell] | None, group: str, age: float):
    """First matching cell, None for the trivial (no-covariates) scheme."""
    if cells is None:
        return None
    for cell in cells:
        if cell.contains(group, age):
            return cell
    raise NoDataError(f"no covariate cell matches group={group!r} age={age!r}")


def first_visits(records: Iterable[ObservationRecord]) -> list[ObservationRecord]:
    """The earliest visit per (subject, test), in first-appearance order."""
    best: dict[tuple[str, str], ObservationRecord] = {}
    order: list[tuple[str, str]] = []
    for rec in records:
        k = (rec.subject_id, rec.test_id)
        if k not in best:
            best[k] = rec
            order.append(k)
        elif rec.visit < best[k].visit:
            best[k] = rec
    return [best[k] for k in order]


def conditional_empirical(
    records: Iterable[ObservationRecord],
    cell: CovariateCell | None,
    support_size: int,
) -> ScoreDistribution:
    """Empirical score distribution of first visits inside one covariate cell."""
    firsts = first_visits(records)
    if cell is not None:
        firsts = [r for r in firsts if cell.contains(r.group, r.age)]
    if not firsts:
        where = "any record" if cell is None else cell.label()
        raise NoDataError(f"no first-visit records in {where}")
    return empirical([r.score for r in firsts], support_size)


def read_records(path) -> list[ObservationRecord]:
    """Load observation records from CSV (header required, UTF-8)."""
    try:
        f = open(path, "r", encoding="utf-8", newline="")
    except OSError as e:
        raise DataError(f"cannot open records file {path}: {e}") from e
    with f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file, header required")
        missing = set(RECORD_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        out = []
        for i, row in enumerate(reader, start=2):
            try:
                out.append(
                    ObservationRecord(
                        subject_id=row["subject_id"],
                        visit=int(row["visit"]),
                        test_id=row["test_id"],
                        score=int(row["score"]),
                        age=float(row["age"]),
                        group=row["group"],
                    )
                )
            except (TypeError, ValueError) as e:
                raise DataError(f"{path}:{i}: bad record: {e}") from e
    return out


def write_records(path, records: Iterable[ObservationRecord]) -> None:
    """Write observation records as CSV with the canonical header."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow([r.subject_id, r.visit, r.test_id, r.score, r.age, r.group])


# ---- Divergences and tail probabilities ----


def kl_divergence(p, q) -> float:
    """KL divergence in nats; +inf when p puts mass where q has none."""
    pv = as_probs(p)
    qv = as_probs(q)
    if pv.shape != qv.shape:
        raise ValueError(f"dimension mismatch: {pv.shape} vs {qv.shape}")
    mask = pv > 0.0
    if np.any(qv[mask] <= 0.0):
        return float("inf")
    return float(np.sum(pv[mask] * np.log(pv[mask] / qv[mask])))


def tv_distance(p, q) -> float:
    """Total variation distance, half the 1-norm."""
    pv = as_probs(p)
    qv = as_probs(q)
    if pv.shape != qv.shape:
        raise ValueError(f"dimension mismatch: {pv.shape} vs {qv.shape}")
    return 0.5 * float(np.abs(pv - qv).sum())


def chi_square_sf(t: float, df: int) -> float:
    """Survival function P(ChiSq_df > t)."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if t <= 0.0:
        return 1.0
    return float(gammaincc(df / 2.0, t / 2.0))


def multinomial_kl_tail_bound(t: float, n: int, k: int) -> float:
    """Finite-sample bound on P(D(empirical || true) >= t) for n iid draws on k cells.

    Method-of-types form min(1, (n+1)^(k-1) * exp(-n*t)), evaluated in log
    space so large k cannot overflow.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if t < 0.0:
        raise ValueError(f"t must be >= 0, got {t}")
    log_bound = (k - 1) * np.log(n + 1.0) - n * t
    if log_bound >= 0.0:
        return 1.0
    return float(np.exp(log_bound))
