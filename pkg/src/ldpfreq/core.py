"""Domain model, deterministic randomness, and dataset generation/ingestion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainDistribution",
    "make_rng",
    "gen_zipf",
    "load_counts",
    "sample_users",
]


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Build a Generator from a base seed plus optional stream tags.

    The same (seed, *stream) tuple always yields the same Generator state,
    so every derived stream is a pure function of its inputs.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(s) for s in stream)]))


@dataclass(frozen=True)
class DomainDistribution:
    """A true frequency distribution over a finite value domain.

    Counts are exact 64-bit integers summing to ``n``; frequencies are
    derived as ``counts / n`` so they are non-negative and sum to one.
    """

    counts: np.ndarray
    n: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 1 or counts.size < 1:
            raise ValueError("counts must be a non-empty 1-d vector")
        if self.n < 1:
            raise ValueError("population size n must be >= 1")
        if counts.min() < 0:
            raise ValueError("counts must be non-negative")
        if int(counts.sum()) != self.n:
            raise ValueError("counts must sum to n")
        if self.labels is not None and len(self.labels) != counts.size:
            raise ValueError("labels length must match domain size")

    @property
    def d(self) -> int:
        return self.counts.size

    @property
    def freqs(self) -> np.ndarray:
        return self.counts / self.n


def _apportion(weights: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder apportionment of n units proportional to weights."""
    weights = np.asarray(weights, dtype=float)
    target = n * weights / weights.sum()
    counts = np.floor(target).astype(np.int64)
    short = n - int(counts.sum())
    if short > 0:
        remainders = target - counts
        # stable sort: ties go to the lower index
        top = np.argsort(-remainders, kind="stable")[:short]
        counts[top] += 1
    return counts


def gen_zipf(d: int, n: int, s: float) -> DomainDistribution:
    """Deterministic Zipf dataset: rank i gets weight (i+1)^(-s).

    Integer counts are apportioned by largest remainder so they sum to n
    exactly; no sampling noise is introduced.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    if s <= 0:
        raise ValueError("s must be > 0")
    weights = np.arange(1, d + 1, dtype=float) ** (-float(s))
    counts = _apportion(weights, n)
    return DomainDistribution(counts=counts, n=n)


def load_counts(path) -> DomainDistribution:
    """Load a `label,count` CSV (no header) into a DomainDistribution."""
    labels: list[str] = []
    counts: list[int] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            label, sep, count_text = line.rpartition(",")
            if not sep:
                raise ValueError(f"{path}: line {lineno}: expected 'label,count'")
            try:
                count = int(count_text)
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: count {count_text!r} is not an integer"
                ) from None
            if count < 0:
                raise ValueError(f"{path}: line {lineno}: count must be non-negative")
            if label in seen:
                raise ValueError(f"{path}: line {lineno}: duplicate label {label!r}")
            seen.add(label)
            labels.append(label)
            counts.append(count)
    if not counts:
        raise ValueError(f"{path}: no records")
    total = sum(counts)
    if total == 0:
        raise ValueError(f"{path}: all counts are zero")
    return DomainDistribution(
        counts=np.asarray(counts, dtype=np.int64), n=total, labels=tuple(labels)
    )


def sample_users(dist: DomainDistribution, seed) -> np.ndarray:
    """Materialize the user population as a seed-shuffled vector of value indices.

    The multiset of values is exactly the integer counts of ``dist``; the
    seed only determines the order.
    """
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    users = np.repeat(np.arange(dist.d, dtype=np.int64), dist.counts)
    return rng.permutation(users)
