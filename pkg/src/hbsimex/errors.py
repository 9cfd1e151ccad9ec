"""Error-variance estimation, bootstrap replicates and covariate contamination.

The additive model is x = U + eps with eps ~ Normal(0, sigma2_eps). The
pooled within-record variance of replicate measurements estimates
sigma2_eps; contamination adds sqrt(lambda) * eps on top of x so the total
added error variance scales as (1 + lambda) * sigma2_eps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DomainError,
    InsufficientReplicatesError,
    ParameterError,
    ValidationError,
)


@dataclass(frozen=True)
class ReplicateSet:
    """Per-record replicate measurements of the error-prone covariate."""

    record_ids: np.ndarray
    replicates: tuple[np.ndarray, ...]

    def __post_init__(self):
        ids = np.asarray(self.record_ids, dtype=np.int64)
        reps = tuple(np.asarray(r, dtype=np.float64) for r in self.replicates)
        object.__setattr__(self, "record_ids", ids)
        object.__setattr__(self, "replicates", reps)
        if ids.shape[0] != len(reps):
            raise ValidationError("record_ids and replicates length mismatch")
        if any(r.size < 1 for r in reps):
            raise ValidationError("every record needs at least one replicate")

    @property
    def counts(self) -> np.ndarray:
        return np.asarray([r.size for r in self.replicates], dtype=np.int64)


@dataclass(frozen=True)
class ErrorModel:
    """Estimated measurement-error variance plus optional latent diagnostics."""

    sigma2_eps: float
    sigma2_u: float | None = None
    mean_u: float | None = None

    def __post_init__(self):
        if self.sigma2_eps < 0.0:
            raise DomainError("sigma2_eps must be non-negative")


def estimate_error_variance(reps: ReplicateSet) -> float:
    """Pooled within-record variance: sum_i sum_q (x_iq - xbar_i)^2 / sum_i (Q_i - 1)."""
    dof = int(np.sum(reps.counts - 1))
    if dof < 1:
        raise InsufficientReplicatesError(
            "all records have a single replicate; cannot estimate sigma2_eps"
        )
    ss = 0.0
    for r in reps.replicates:
        if r.size > 1:
            ss += float(np.sum((r - np.mean(r)) ** 2))
    return ss / dof


def error_model_from_replicates(reps: ReplicateSet, x: np.ndarray) -> ErrorModel:
    """Moment-subtraction diagnostics around the replicate-based estimate."""
    x = np.asarray(x, dtype=np.float64)
    s2e = estimate_error_variance(reps)
    var_x = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
    return ErrorModel(
        sigma2_eps=s2e,
        sigma2_u=max(var_x - s2e, 0.0),
        mean_u=float(np.mean(x)),
    )


def bootstrap_replicates(
    x,
    Q: int,
    seed: int,
    cohorts=None,
) -> ReplicateSet:
    """Q resampled measurements per record around its observed value.

    Residuals are deviations from cohort means (marginal mean when
    ``cohorts`` is None) resampled with replacement; deterministic under a
    fixed seed.
    """
    if Q < 2:
        raise ParameterError(f"Q must be >= 2, got {Q}")
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ParameterError("x must be non-empty")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    if cohorts is None:
        groups = np.zeros(x.shape[0], dtype=np.int64)
    else:
        groups = np.asarray(cohorts, dtype=np.int64)
    pools: dict[int, np.ndarray] = {}
    for g in np.unique(groups):
        vals = x[groups == g]
        pools[int(g)] = vals - np.mean(vals)
    reps = []
    for i in range(x.shape[0]):
        pool = pools[int(groups[i])]
        draw = pool[rng.integers(0, pool.shape[0], size=Q)]
        reps.append(x[i] + draw)
    return ReplicateSet(record_ids=np.arange(x.shape[0]), replicates=tuple(reps))


def contaminate(x, lam: float, sigma2_eps: float, seed=None, rng=None) -> np.ndarray:
    """w(lambda) = x + sqrt(lambda) * eps with eps ~ Normal(0, sigma2_eps).

    lambda = 0 returns x exactly. Pass either a seed or an existing
    Generator (SIMEX derives one per grid cell).
    """
    if lam < 0.0:
        raise DomainError(f"lambda must be non-negative, got {lam}")
    if sigma2_eps < 0.0:
        raise DomainError(f"sigma2_eps must be non-negative, got {sigma2_eps}")
    x = np.asarray(x, dtype=np.float64)
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    eps = rng.normal(0.0, np.sqrt(sigma2_eps), size=x.shape[0])
    return x + np.sqrt(lam) * eps


def replicates_to_csv(reps: ReplicateSet, path) -> None:
    """Audit format: record_id, replicate_index, value."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", "replicate_index", "value"])
        for rid, values in zip(reps.record_ids, reps.replicates):
            for q, v in enumerate(values, start=1):
                writer.writerow([int(rid), q, repr(float(v))])


def replicates_from_csv(path) -> ReplicateSet:
    by_record: dict[int, list[tuple[int, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {
            "record_id",
            "replicate_index",
            "value",
        }.issubset(reader.fieldnames):
            raise ValidationError("replicate CSV needs record_id, replicate_index, value")
        for row in reader:
            rid = int(row["record_id"])
            by_record.setdefault(rid, []).append(
                (int(row["replicate_index"]), float(row["value"]))
            )
    if not by_record:
        raise ValidationError("replicate CSV has no rows")
    ids = sorted(by_record)
    reps = tuple(
        np.asarray([v for _, v in sorted(by_record[rid])], dtype=np.float64) for rid in ids
    )
    return ReplicateSet(record_ids=np.asarray(ids), replicates=reps)
