"""Experiment orchestration: repetitions, metrics, bias/variance, equivalent-n."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import DomainDistribution, _apportion, make_rng, sample_users
from .oracles import (
    EstimateVector,
    NoiseModel,
    PerturbParams,
    estimate,
    grr_aggregate,
    grr_params,
    grr_perturb,
    olh_aggregate,
    olh_params,
    olh_perturb,
)
from .postprocess import METHODS, ProcessedEstimate, apply_method, fit_power, power, power_ns

__all__ = [
    "FullDomainQuery",
    "SetValueQuery",
    "FixedSetQuery",
    "TopKQuery",
    "ExperimentConfig",
    "MethodRecord",
    "ExperimentResult",
    "EquivalentN",
    "BiasVariance",
    "build_params",
    "run_once",
    "run_repetitions",
    "run_experiment",
    "mse_full",
    "mse_set",
    "mse_topk",
    "mse_fixed_sets",
    "bias_variance",
    "equivalent_n",
    "select_method_synthetic",
    "load_fixed_sets",
    "result_to_csv",
    "result_to_json",
]

# stream tags for seed derivation, so independent streams never collide
_STREAM_REP = 1
_STREAM_QUERY = 2
_STREAM_SYNTH = 3


@dataclass(frozen=True)
class FullDomainQuery:
    pass


@dataclass(frozen=True)
class SetValueQuery:
    rho: float  # subset size as a percentage of the domain
    samples: int = 100  # random subsets per repetition

    def __post_init__(self):
        if not (0.0 < self.rho < 100.0):
            raise ValueError("rho must be in (0, 100)")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")


@dataclass(frozen=True)
class FixedSetQuery:
    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if not self.sets:
            raise ValueError("need at least one set")


@dataclass(frozen=True)
class TopKQuery:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DomainDistribution
    epsilon: float
    oracle: str  # "grr" or "olh"
    methods: tuple[str, ...]
    repetitions: int = 30
    base_seed: int = 0
    query: object = field(default_factory=FullDomainQuery)
    alpha: float = 2.0  # base-cut expected false positives
    grid_size: int | None = None  # power posterior grid; None -> ceil(sqrt(n))

    def __post_init__(self):
        if self.oracle not in ("grr", "olh"):
            raise ValueError("oracle must be 'grr' or 'olh'")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods: {unknown}")
        if isinstance(self.query, TopKQuery) and self.query.k > self.dataset.d:
            raise ValueError("k must be <= domain size")


def build_params(config: ExperimentConfig) -> PerturbParams:
    maker = grr_params if config.oracle == "grr" else olh_params
    return maker(config.epsilon, config.dataset.d)


def run_once(
    config: ExperimentConfig, rep_index: int
) -> tuple[dict[str, ProcessedEstimate], dict]:
    """One repetition: sample, perturb, aggregate, estimate, post-process.

    Every method is applied to the same raw estimate vector, so within a
    repetition methods share the noise realization.  Deterministic given
    (base_seed, rep_index).
    """
    params = build_params(config)
    dataset = config.dataset
    rng = make_rng(config.base_seed, _STREAM_REP, rep_index)
    users = sample_users(dataset, rng)
    if config.oracle == "grr":
        counts = grr_aggregate(grr_perturb(users, params, rng), dataset.d)
    else:
        counts = olh_aggregate(olh_perturb(users, params, rng), dataset.d)
    raw = estimate(counts, params)
    noise = NoiseModel(params=params, n=dataset.n)

    info: dict = {}
    out: dict[str, ProcessedEstimate] = {}
    timings: dict[str, float] = {}
    prior = None
    for name in config.methods:
        t0 = time.perf_counter()
        if name in ("power", "power-ns"):
            if prior is None:
                prior = fit_power(raw, noise, grid_size=config.grid_size)
                info["power_s"] = prior.s
                info["power_s_clamped"] = prior.clamped
            out[name] = power(raw, prior, noise) if name == "power" else power_ns(raw, prior, noise)
        else:
            out[name] = apply_method(
                name, raw, params=params, noise=noise, alpha=config.alpha
            )
        timings[name] = time.perf_counter() - t0
    info["timings"] = timings
    info["raw"] = raw
    return out, info


def run_repetitions(
    config: ExperimentConfig, threads: int = 1
) -> list[tuple[dict[str, ProcessedEstimate], dict]]:
    """All repetitions, merged in rep_index order regardless of scheduling."""
    reps = range(config.repetitions)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda r: run_once(config, r), reps))
    return [run_once(config, r) for r in reps]


# ---------------------------------------------------------------------------
# Metrics


def _values(proc: ProcessedEstimate) -> np.ndarray:
    """Per-value answers; post-pos clips each singleton query at zero."""
    if proc.method == "post-pos":
        return np.maximum(proc.est, 0.0)
    return proc.est


def mse_full(truth: DomainDistribution, proc: ProcessedEstimate) -> float:
    """Mean squared per-value error over the whole domain."""
    if truth.d != proc.d:
        raise ValueError("dimension mismatch")
    diff = truth.freqs - _values(proc)
    return float(np.mean(diff**2))


def mse_topk(truth: DomainDistribution, proc: ProcessedEstimate, k: int) -> float:
    """Mean squared error over the k values with highest true frequency.

    Ties in the truth break toward the lowest index; the estimator never
    sees the top-k set.
    """
    if not (1 <= k <= truth.d):
        raise ValueError("k must be in [1, d]")
    top = np.argsort(-truth.freqs, kind="stable")[:k]
    diff = truth.freqs[top] - _values(proc)[top]
    return float(np.mean(diff**2))


def _subset_mse(truth: DomainDistribution, proc: ProcessedEstimate, subsets) -> float:
    true_sums = np.array([truth.freqs[list(s)].sum() for s in subsets])
    est_sums = np.array([proc.est[list(s)].sum() for s in subsets])
    if proc.method == "post-pos":
        est_sums = np.maximum(est_sums, 0.0)
    return float(np.mean((true_sums - est_sums) ** 2))


def draw_subsets(d: int, rho: float, samples: int, rng: np.random.Generator) -> np.ndarray:
    size = round(rho * d / 100.0)
    if size < 1:
        raise ValueError("subset size rounds to zero")
    return np.stack([rng.choice(d, size=size, replace=False) for _ in range(samples)])


def mse_set(
    truth: DomainDistribution,
    proc: ProcessedEstimate,
    rho: float,
    samples: int,
    seed,
) -> float:
    """Mean squared error of subset-sum queries over random rho% subsets."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    subsets = draw_subsets(truth.d, rho, samples, rng)
    return _subset_mse(truth, proc, subsets)


def mse_fixed_sets(
    truth: DomainDistribution, proc: ProcessedEstimate, sets: tuple[tuple[int, ...], ...]
) -> float:
    return _subset_mse(truth, proc, sets)


def _query_mse(
    config: ExperimentConfig,
    proc: ProcessedEstimate,
    rep_index: int,
) -> float:
    truth = config.dataset
    query = config.query
    if isinstance(query, FullDomainQuery):
        return mse_full(truth, proc)
    if isinstance(query, TopKQuery):
        return mse_topk(truth, proc, query.k)
    if isinstance(query, FixedSetQuery):
        return mse_fixed_sets(truth, proc, query.sets)
    if isinstance(query, SetValueQuery):
        # methods within one repetition are scored on the same subsets
        rng = make_rng(config.base_seed, _STREAM_QUERY, rep_index)
        subsets = draw_subsets(truth.d, query.rho, query.samples, rng)
        return _subset_mse(truth, proc, subsets)
    raise TypeError(f"unknown query type {type(query).__name__}")


# ---------------------------------------------------------------------------
# Experiment results


@dataclass(frozen=True)
class MethodRecord:
    method: str
    mse: float
    std: float
    wall_time: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be >= 0")


@dataclass(frozen=True)
class ExperimentResult:
    records: tuple[MethodRecord, ...]
    config: ExperimentConfig
    metadata: dict = field(default_factory=dict)

    def record(self, method: str) -> MethodRecord:
        for rec in self.records:
            if rec.method == method:
                return rec
        raise KeyError(method)

    def mse(self, method: str) -> float:
        return self.record(method).mse


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Run all repetitions and score the configured query per method."""
    reps = run_repetitions(config, threads=threads)
    return score_repetitions(config, reps)


def score_repetitions(config: ExperimentConfig, reps) -> ExperimentResult:
    """Score already-materialized repetitions against the configured query."""
    per_method: dict[str, list[float]] = {m: [] for m in config.methods}
    wall: dict[str, float] = {m: 0.0 for m in config.methods}
    clamped = 0
    for rep_index, (procs, info) in enumerate(reps):
        for name in config.methods:
            per_method[name].append(_query_mse(config, procs[name], rep_index))
            wall[name] += info["timings"][name]
        clamped += bool(info.get("power_s_clamped"))
    records = tuple(
        MethodRecord(
            method=m,
            mse=float(np.mean(per_method[m])),
            std=float(np.std(per_method[m], ddof=1)) if len(per_method[m]) > 1 else 0.0,
            wall_time=wall[m],
        )
        for m in config.methods
    )
    metadata = {"repetitions": config.repetitions, "base_seed": config.base_seed}
    if any(m in ("power", "power-ns") for m in config.methods):
        metadata["power_s_clamped_reps"] = clamped
    return ExperimentResult(records=records, config=config, metadata=metadata)


# ---------------------------------------------------------------------------
# Bias / variance decomposition


@dataclass(frozen=True)
class BiasVariance:
    """Per-value empirical bias and variance, in count units (scaled by n)."""

    bias: np.ndarray  # n * (mean estimate - truth)
    variance: np.ndarray  # n * per-value variance of the frequency estimate
    bias_se: np.ndarray  # n * standard error of the per-value mean
    sum_bias: float  # n * mean over reps of sum(f' - f)
    sum_bias_se: float
    repetitions: int


def bias_variance(config: ExperimentConfig, threads: int = 1) -> dict[str, BiasVariance]:
    """Empirical per-value bias/variance across repetitions, per method."""
    truth = config.dataset.freqs
    n = config.dataset.n
    reps = run_repetitions(config, threads=threads)
    out: dict[str, BiasVariance] = {}
    for name in config.methods:
        ests = np.stack([_values(procs[name]) for procs, _ in reps])
        r = ests.shape[0]
        mean = ests.mean(axis=0)
        var = ests.var(axis=0, ddof=1) if r > 1 else np.zeros_like(mean)
        sums = (ests - truth).sum(axis=1)
        out[name] = BiasVariance(
            bias=n * (mean - truth),
            variance=n * var,
            bias_se=n * np.sqrt(var / r),
            sum_bias=float(n * sums.mean()),
            sum_bias_se=float(n * sums.std(ddof=1) / np.sqrt(r)) if r > 1 else 0.0,
            repetitions=r,
        )
    return out


# ---------------------------------------------------------------------------
# Equivalent population size


@dataclass(frozen=True)
class EquivalentN:
    n: int
    n_prime: float


def analytic_mse_numerator(params: PerturbParams, d: int) -> float:
    """Domain-averaged analytical MSE times the population size."""
    p, q = params.p, params.q
    return q * (1 - q) / (p - q) ** 2 + (1.0 / d) * (1 - p - q) / (p - q)


def equivalent_n(
    config: ExperimentConfig, result: ExperimentResult | None = None, threads: int = 1
) -> dict[str, EquivalentN]:
    """Population size whose analytical full-domain MSE matches the empirical one."""
    if not isinstance(config.query, FullDomainQuery):
        config = replace(config, query=FullDomainQuery())
    if result is None:
        result = run_experiment(config, threads=threads)
    params = build_params(config)
    numerator = analytic_mse_numerator(params, config.dataset.d)
    out = {}
    for rec in result.records:
        if rec.mse <= 0:
            raise ValueError(f"zero MSE for {rec.method}: equivalent n undefined")
        out[rec.method] = EquivalentN(n=config.dataset.n, n_prime=numerator / rec.mse)
    return out


# ---------------------------------------------------------------------------
# Synthetic method selection


def select_method_synthetic(
    est: EstimateVector,
    config: ExperimentConfig,
    consistency_method: str,
    sim_reps: int = 10,
    threads: int = 1,
) -> str:
    """Pick the candidate method that wins on a synthesized ground truth.

    The raw estimate is made consistent, a population is apportioned from
    it, and the full pipeline is simulated sim_reps times; the method with
    the lowest mean MSE on the configured query wins, ties broken by
    method-identifier order.
    """
    if consistency_method not in ("norm-sub", "power-ns"):
        raise ValueError("consistency_method must be 'norm-sub' or 'power-ns'")
    params = build_params(config)
    noise = NoiseModel(params=params, n=config.dataset.n)
    consistent = apply_method(
        consistency_method, est, params=params, noise=noise, alpha=config.alpha
    )
    weights = consistent.est
    if weights.sum() <= 0:
        raise ValueError("consistent estimate has no mass")
    synthetic = DomainDistribution(
        counts=_apportion(weights, config.dataset.n), n=config.dataset.n
    )
    sim_config = replace(
        config,
        dataset=synthetic,
        repetitions=sim_reps,
        base_seed=int(make_rng(config.base_seed, _STREAM_SYNTH).integers(2**63)),
    )
    result = run_experiment(sim_config, threads=threads)
    best = min(result.records, key=lambda rec: (rec.mse, METHODS.index(rec.method)))
    return best.method


# ---------------------------------------------------------------------------
# Serialization


def load_fixed_sets(path) -> tuple[tuple[int, ...], ...]:
    """Read `set_id,member_index` lines into ordered member-index tuples."""
    groups: dict[str, list[int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            set_id, sep, member = line.partition(",")
            if not sep:
                raise ValueError(f"{path}: line {lineno}: expected 'set_id,member_index'")
            try:
                idx = int(member)
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: member index {member!r} is not an integer"
                ) from None
            groups.setdefault(set_id, []).append(idx)
    if not groups:
        raise ValueError(f"{path}: no records")
    return tuple(tuple(members) for members in groups.values())


def _query_param(config: ExperimentConfig) -> str:
    query = config.query
    if isinstance(query, SetValueQuery):
        return _fmt(query.rho)
    if isinstance(query, TopKQuery):
        return str(query.k)
    if isinstance(query, FixedSetQuery):
        return "fixed"
    return _fmt(config.epsilon)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def result_to_csv(result: ExperimentResult, metric: str = "mse") -> str:
    """Emit `method,metric,param,value,std` rows with a header line."""
    param = _query_param(result.config)
    lines = ["method,metric,param,value,std"]
    for rec in result.records:
        lines.append(f"{rec.method},{metric},{param},{_fmt(rec.mse)},{_fmt(rec.std)}")
    return "\n".join(lines) + "\n"


def _config_dict(config: ExperimentConfig) -> dict:
    query = config.query
    if isinstance(query, SetValueQuery):
        qdict = {"type": "set-value", "rho": query.rho, "samples": query.samples}
    elif isinstance(query, TopKQuery):
        qdict = {"type": "top-k", "k": query.k}
    elif isinstance(query, FixedSetQuery):
        qdict = {"type": "fixed-sets", "num_sets": len(query.sets)}
    else:
        qdict = {"type": "full-domain"}
    return {
        "d": config.dataset.d,
        "n": config.dataset.n,
        "epsilon": config.epsilon,
        "oracle": config.oracle,
        "methods": list(config.methods),
        "repetitions": config.repetitions,
        "base_seed": config.base_seed,
        "alpha": config.alpha,
        "grid_size": config.grid_size,
        "query": qdict,
    }


def result_to_json(result: ExperimentResult) -> str:
    payload = {
        "config": _config_dict(result.config),
        "metadata": result.metadata,
        "records": [
            {
                "method": rec.method,
                "mse": rec.mse,
                "std": rec.std,
                "wall_time": rec.wall_time,
            }
            for rec in result.records
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
