"""Frequency oracles: GRR and OLH perturbation, aggregation, and estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PerturbParams",
    "grr_params",
    "olh_params",
    "OlhReports",
    "NoiseModel",
    "EstimateVector",
    "SupportCounts",
    "hash_to_bucket",
    "grr_perturb",
    "olh_perturb",
    "grr_aggregate",
    "olh_aggregate",
    "estimate",
    "analytic_variance",
    "reports_to_csv",
]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class PerturbParams:
    """The (epsilon, d, g, p, q) tuple governing one frequency oracle instance.

    p is the probability a report supports the user's own value; q the
    probability it supports any other value (for OLH, q = 1/g).
    """

    epsilon: float
    d: int
    g: int
    p: float
    q: float

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("domain size d must be >= 2")
        if self.g < 2:
            raise ValueError("hash range g must be >= 2")
        if not (0.0 < self.q < self.p < 1.0):
            raise ValueError("need 0 < q < p < 1")


def grr_params(epsilon: float, d: int) -> PerturbParams:
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    e = math.exp(epsilon)
    return PerturbParams(epsilon=epsilon, d=d, g=d, p=e / (e + d - 1), q=1.0 / (e + d - 1))


def olh_params(epsilon: float, d: int) -> PerturbParams:
    """OLH with hash range g = round(e^eps + 1), clamped to >= 2."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    e = math.exp(epsilon)
    g = max(2, round(e + 1))
    return PerturbParams(epsilon=epsilon, d=d, g=g, p=e / (e + g - 1), q=1.0 / g)


@dataclass(frozen=True)
class OlhReports:
    """OLH reports as parallel arrays: per-user 64-bit hash keys and buckets."""

    keys: np.ndarray  # uint64 hash keys, one per user
    ys: np.ndarray  # reported buckets in [0, g)
    g: int

    def __post_init__(self):
        keys = np.ascontiguousarray(self.keys, dtype=np.uint64)
        ys = np.ascontiguousarray(self.ys, dtype=np.int64)
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "ys", ys)
        if keys.shape != ys.shape or keys.ndim != 1:
            raise ValueError("keys and ys must be 1-d arrays of equal length")
        if ys.size and (ys.min() < 0 or ys.max() >= self.g):
            raise ValueError("reported bucket out of [0, g)")

    def __len__(self) -> int:
        return self.keys.size


@dataclass(frozen=True)
class SupportCounts:
    """Per-value report-support counts c_v plus the number of reports n."""

    counts: np.ndarray
    n: int

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.min(initial=0) < 0:
            raise ValueError("support counts must be non-negative")

    @property
    def d(self) -> int:
        return self.counts.size


@dataclass(frozen=True)
class EstimateVector:
    """Raw unbiased frequency estimates; entries may be negative."""

    est: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "est", np.ascontiguousarray(self.est, dtype=float))

    @property
    def d(self) -> int:
        return self.est.size


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over uint64 arrays (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def hash_to_bucket(keys, values, g: int) -> np.ndarray:
    """Keyed hash of value indices into [0, g), broadcasting keys x values.

    Uses the top 32 bits with a multiplicative range mapping, avoiding
    modulo bias.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    values = np.asarray(values, dtype=np.uint64)
    z = _mix64(keys + (values + np.uint64(1)) * _GAMMA)
    return (((z >> np.uint64(32)) * np.uint64(g)) >> np.uint64(32)).astype(np.int64)


def _grr_core(values: np.ndarray, m: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Randomized response over [0, m): keep with prob p else uniform other."""
    values = np.asarray(values, dtype=np.int64)
    keep = rng.random(values.shape) < p
    alt = rng.integers(0, m - 1, size=values.shape, dtype=np.int64)
    alt += alt >= values
    return np.where(keep, values, alt)


def grr_perturb(values, params: PerturbParams, rng: np.random.Generator):
    """GRR perturbation of value indices; scalar in, scalar out."""
    scalar = np.isscalar(values)
    arr = np.atleast_1d(np.asarray(values, dtype=np.int64))
    if arr.size and (arr.min() < 0 or arr.max() >= params.d):
        raise ValueError("value index out of domain")
    out = _grr_core(arr, params.d, params.p, rng)
    return int(out[0]) if scalar else out


def olh_perturb(values, params: PerturbParams, rng: np.random.Generator) -> OlhReports:
    """OLH perturbation: fresh per-user key, hash to [0, g), GRR on the bucket."""
    arr = np.atleast_1d(np.asarray(values, dtype=np.int64))
    if arr.size and (arr.min() < 0 or arr.max() >= params.d):
        raise ValueError("value index out of domain")
    keys = rng.integers(0, 2**64, size=arr.shape, dtype=np.uint64)
    h = hash_to_bucket(keys, arr, params.g)
    ys = _grr_core(h, params.g, params.p, rng)
    return OlhReports(keys=keys, ys=ys, g=params.g)


def grr_aggregate(reports, d: int) -> SupportCounts:
    reports = np.asarray(reports, dtype=np.int64)
    return SupportCounts(counts=np.bincount(reports, minlength=d), n=reports.size)


def olh_aggregate(reports: OlhReports, d: int, chunk: int = 512) -> SupportCounts:
    """Count, for each value v, the reports whose bucket matches H_key(v)."""
    counts = np.zeros(d, dtype=np.int64)
    values = np.arange(d, dtype=np.uint64)
    n = len(reports)
    for lo in range(0, n, chunk):
        keys = reports.keys[lo : lo + chunk, None]
        ys = reports.ys[lo : lo + chunk, None]
        buckets = hash_to_bucket(keys, values[None, :], reports.g)
        counts += (buckets == ys).sum(axis=0)
    return SupportCounts(counts=counts, n=n)


def estimate(counts: SupportCounts, params: PerturbParams) -> EstimateVector:
    """Unbiased estimates: (c_v/n - q) / (p - q)."""
    if counts.n < 1:
        raise ValueError("need at least one report")
    denom = params.p - params.q
    if denom <= 0:
        raise ValueError("degenerate privacy parameters: p == q")
    return EstimateVector(est=(counts.counts / counts.n - params.q) / denom)


def analytic_variance(params: PerturbParams, n: int, f_v: float | None = None) -> float:
    """Per-value estimator variance; the f_v-free approximation when f_v is None."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p, q = params.p, params.q
    num = q * (1 - q)
    if f_v is not None:
        num += f_v * (p - q) * (1 - p - q)
    return num / (n * (p - q) ** 2)


@dataclass(frozen=True)
class NoiseModel:
    """Noise scale of the oracle: distribution-independent and per-value forms."""

    params: PerturbParams
    n: int

    @property
    def sigma_sq(self) -> float:
        return analytic_variance(self.params, self.n)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma_sq)

    def per_value(self, f_v: float) -> float:
        return analytic_variance(self.params, self.n, f_v)


def reports_to_csv(reports: OlhReports) -> str:
    """Debug export of raw OLH reports as `key,y` lines."""
    lines = [f"{int(k)},{int(y)}" for k, y in zip(reports.keys, reports.ys)]
    return "\n".join(lines) + ("\n" if lines else "")
