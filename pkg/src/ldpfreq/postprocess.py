"""Consistency post-processing estimators for raw frequency-oracle output.

The method identifiers, in their documented fixed order, are::

    base, base-pos, post-pos, base-cut, norm, norm-mul, norm-cut,
    norm-sub, mle-apx, power, power-ns

Methods that solve a small optimization problem (norm-mul, norm-sub,
norm-cut, mle-apx) return a SolverResult describing the active set and the
shift/scale/threshold found; the rest return a ProcessedEstimate directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _stdnorm

from .oracles import EstimateVector, NoiseModel, PerturbParams

__all__ = [
    "METHODS",
    "ProcessedEstimate",
    "SolverResult",
    "CutConfig",
    "PowerPrior",
    "base",
    "base_pos",
    "post_pos",
    "base_cut",
    "norm",
    "norm_mul",
    "norm_sub",
    "norm_cut",
    "mle_apx",
    "fit_power",
    "power",
    "power_ns",
    "apply_method",
]

METHODS = (
    "base",
    "base-pos",
    "post-pos",
    "base-cut",
    "norm",
    "norm-mul",
    "norm-cut",
    "norm-sub",
    "mle-apx",
    "power",
    "power-ns",
)


@dataclass(frozen=True)
class ProcessedEstimate:
    """A post-processed frequency vector plus the guarantees it carries."""

    est: np.ndarray
    method: str
    nonneg_guaranteed: bool
    sums_to_one_guaranteed: bool

    def __post_init__(self):
        est = np.ascontiguousarray(self.est, dtype=float)
        object.__setattr__(self, "est", est)
        if self.nonneg_guaranteed and est.size and est.min() < 0:
            raise ValueError("nonneg_guaranteed violated")
        if self.sums_to_one_guaranteed and abs(est.sum() - 1.0) > 1e-9:
            raise ValueError("sums_to_one_guaranteed violated")

    @property
    def d(self) -> int:
        return self.est.size


@dataclass(frozen=True)
class SolverResult:
    est: ProcessedEstimate
    zero_set: frozenset[int]
    iterations: int = 1
    shift: float | None = None  # additive delta
    scale: float | None = None  # multiplicative gamma
    threshold: float | None = None  # cut threshold theta
    multiplier: float | None = None  # KKT multiplier of mle-apx


@dataclass(frozen=True)
class CutConfig:
    """Sensitivity-threshold config: alpha is the expected false-positive count."""

    alpha: float = 2.0

    def threshold(self, d: int, sigma: float) -> float:
        if not (0 < self.alpha < d):
            raise ValueError("alpha must be in (0, d)")
        return float(_stdnorm.ppf(1.0 - self.alpha / d) * sigma)


@dataclass(frozen=True)
class PowerPrior:
    """Fitted power-law prior (density ~ x^-s) and posterior grid resolution."""

    s: float
    grid_size: int
    raw_s: float | None = None

    @property
    def clamped(self) -> bool:
        return self.raw_s is not None and self.raw_s != self.s


def _zero_set(out: np.ndarray) -> frozenset[int]:
    return frozenset(np.flatnonzero(out == 0.0).tolist())


def base(est: EstimateVector) -> ProcessedEstimate:
    """Identity: the raw oracle output."""
    return ProcessedEstimate(est.est.copy(), "base", False, False)


def base_pos(est: EstimateVector) -> ProcessedEstimate:
    """Clip negative estimates to zero (introduces positive bias)."""
    return ProcessedEstimate(np.maximum(est.est, 0.0), "base-pos", True, False)


def post_pos(query_answer: float) -> float:
    """Clip one raw query answer at zero; applied at query time, not to the vector."""
    return max(float(query_answer), 0.0)


def base_cut(est: EstimateVector, cfg: CutConfig, noise: NoiseModel) -> ProcessedEstimate:
    """Zero everything at or below the sensitivity threshold T.

    The threshold is floored at zero so negative estimates never survive;
    the inverse-CDF formula only dips below zero when alpha >= d/2, far
    outside the regime the threshold is designed for.
    """
    t = max(cfg.threshold(est.d, noise.sigma), 0.0)
    out = np.where(est.est > t, est.est, 0.0)
    return ProcessedEstimate(out, "base-cut", True, False)


def norm(est: EstimateVector) -> ProcessedEstimate:
    """Additive renormalization: shift every entry so the sum is one."""
    delta = (1.0 - est.est.sum()) / est.d
    return ProcessedEstimate(est.est + delta, "norm", False, True)


def norm_mul(est: EstimateVector) -> SolverResult:
    """Clip negatives, then rescale the positive mass to sum to one."""
    pos = np.maximum(est.est, 0.0)
    pos_sum = float(pos.sum())
    if pos_sum <= 0:
        raise ValueError("norm-mul needs at least one positive estimate")
    # divide by the mass rather than multiply by its reciprocal, which can
    # overflow when the positive mass is subnormal
    out = pos / pos_sum
    proc = ProcessedEstimate(out, "norm-mul", True, True)
    return SolverResult(est=proc, zero_set=_zero_set(out), scale=1.0 / pos_sum)


def norm_sub(est: EstimateVector) -> SolverResult:
    """Find delta with sum(max(f + delta, 0)) = 1; the simplex projection.

    Solved by a single sorted waterfill pass over the candidate active sets.
    """
    f = est.est
    d = f.size
    s = np.sort(f)[::-1]
    csum = np.cumsum(s)
    ks = np.arange(1, d + 1)
    deltas = (1.0 - csum) / ks
    # largest k whose smallest kept entry stays positive after shifting
    valid = s + deltas > 0
    k = int(np.nonzero(valid)[0].max()) + 1
    delta = float(deltas[k - 1])
    out = np.maximum(f + delta, 0.0)
    proc = ProcessedEstimate(out, "norm-sub", True, True)
    return SolverResult(est=proc, zero_set=_zero_set(out), shift=delta)


def norm_cut(est: EstimateVector) -> SolverResult:
    """Zero negative and small positive entries until the kept mass is <= 1.

    Kept entries are unchanged; the final sum may be below one.
    """
    f = est.est
    # small slack so rounding in an otherwise-consistent input cannot flip
    # the branch and cut a genuine entry
    tol = 1e-9
    if np.maximum(f, 0.0).sum() <= 1.0 + tol:
        out = np.maximum(f, 0.0)
        proc = ProcessedEstimate(out, "norm-cut", True, False)
        return SolverResult(est=proc, zero_set=_zero_set(out))
    # distinct positive values descending; support of theta=t is every entry >= t
    uniq = np.unique(f[f > 0])[::-1]
    sums = np.cumsum([f[f == t].sum() for t in uniq])
    ok = np.nonzero(sums <= 1.0 + tol)[0]
    if ok.size:
        theta = float(uniq[ok.max()])
        out = np.where(f >= theta, f, 0.0)
    else:
        # even the largest entry group exceeds one: cut everything
        theta = float(np.nextafter(uniq[0], np.inf))
        out = np.zeros_like(f)
    proc = ProcessedEstimate(out, "norm-cut", True, False)
    return SolverResult(est=proc, zero_set=_zero_set(out), threshold=theta)


def mle_apx(est: EstimateVector, params: PerturbParams) -> SolverResult:
    """Constrained MLE under the Gaussian noise approximation.

    Active-set KKT solve: on the free set a single multiplier x gives
    f'_v = (q(1-q)x + f_v(p-q)) / ((p-q)(1 - (1-p-q)x)), with x fixed by the
    sum-to-one constraint; strictly negative entries are moved to the zero
    set until none remain.
    """
    p, q = params.p, params.q
    a = p - q
    b = 1.0 - p - q
    q1q = q * (1.0 - q)
    f = est.est
    d = f.size
    free = np.ones(d, dtype=bool)
    out = np.zeros(d)
    x = 0.0
    iterations = 0
    for iterations in range(1, d + 1):
        k = int(free.sum())
        if k == 0:
            raise RuntimeError("mle-apx zero set swallowed the whole domain")
        s = f[free].sum()
        x = a * (1.0 - s) / (k * q1q + a * b)
        denom = a * (1.0 - b * x)
        if denom <= 0:
            raise RuntimeError("mle-apx solve degenerate: non-positive denominator")
        vals = (q1q * x + f[free] * a) / denom
        out = np.zeros(d)
        out[free] = vals
        neg = out < 0
        if not neg.any():
            break
        free &= ~neg
    else:
        raise RuntimeError("mle-apx active-set iteration did not converge")
    out = np.maximum(out, 0.0)
    proc = ProcessedEstimate(out, "mle-apx", True, True)
    return SolverResult(
        est=proc, zero_set=_zero_set(out), iterations=iterations, multiplier=float(x)
    )


def fit_power(est: EstimateVector, noise: NoiseModel, grid_size: int | None = None) -> PowerPrior:
    """Fit the power-law exponent by log-log least squares over supra-noise entries.

    Ranks come from sorting the estimates descending; entries at or below
    the noise floor sigma are excluded.  Negative fitted exponents are
    clamped to zero (an increasing power law is not a usable prior).
    """
    sigma = noise.sigma
    used = np.sort(est.est[est.est > sigma])[::-1]
    if used.size < 2:
        raise ValueError("fit-power needs at least 2 entries above the noise floor")
    ranks = np.arange(1, used.size + 1)
    slope = np.polyfit(np.log(ranks), np.log(used), 1)[0]
    raw_s = float(-slope)
    if abs(raw_s) < 1e-12:
        raw_s = 0.0
    if grid_size is None:
        grid_size = math.isqrt(noise.n - 1) + 1  # ceil(sqrt(n))
    return PowerPrior(s=max(raw_s, 0.0), grid_size=grid_size, raw_s=raw_s)


def power(est: EstimateVector, prior: PowerPrior, noise: NoiseModel) -> ProcessedEstimate:
    """Per-value posterior mean under a power-law prior and Gaussian noise.

    Midpoint quadrature on a uniform grid over (0, min(1, max(f)+4*sigma)];
    the output is strictly positive and order-preserving.
    """
    sigma = noise.sigma
    if sigma <= 0:
        raise ValueError("degenerate noise model: sigma = 0")
    f = est.est
    hi = min(1.0, float(f.max()) + 4.0 * sigma)
    if hi <= 0:
        hi = min(1.0, 4.0 * sigma)
    m = prior.grid_size
    x = hi * (np.arange(m) + 0.5) / m
    log_w = -((f[:, None] - x[None, :]) ** 2) / (2.0 * sigma**2) - prior.s * np.log(x)[None, :]
    w = np.exp(log_w - log_w.max(axis=1, keepdims=True))
    out = (w @ x) / w.sum(axis=1)
    return ProcessedEstimate(out, "power", True, False)


def power_ns(est: EstimateVector, prior: PowerPrior, noise: NoiseModel) -> ProcessedEstimate:
    """Power followed by norm-sub; consistent output."""
    smoothed = power(est, prior, noise)
    projected = norm_sub(EstimateVector(smoothed.est)).est
    return ProcessedEstimate(projected.est, "power-ns", True, True)


def apply_method(
    name: str,
    est: EstimateVector,
    params: PerturbParams | None = None,
    noise: NoiseModel | None = None,
    alpha: float = 2.0,
    grid_size: int | None = None,
) -> ProcessedEstimate:
    """Dispatch a method identifier to its estimator.

    post-pos returns the raw vector; its clipping is applied at query time
    by the metric functions.
    """
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}")
    if name == "base":
        return base(est)
    if name == "base-pos":
        return base_pos(est)
    if name == "post-pos":
        return ProcessedEstimate(est.est.copy(), "post-pos", False, False)
    if name == "norm":
        return norm(est)
    if name == "norm-mul":
        return norm_mul(est).est
    if name == "norm-sub":
        return norm_sub(est).est
    if name == "norm-cut":
        return norm_cut(est).est
    if name == "base-cut":
        if noise is None:
            raise ValueError("base-cut needs a noise model")
        return base_cut(est, CutConfig(alpha=alpha), noise)
    if name == "mle-apx":
        if params is None:
            raise ValueError("mle-apx needs perturbation parameters")
        return mle_apx(est, params).est
    # power / power-ns
    if noise is None:
        raise ValueError(f"{name} needs a noise model")
    prior = fit_power(est, noise, grid_size=grid_size)
    if name == "power":
        return power(est, prior, noise)
    return power_ns(est, prior, noise)
