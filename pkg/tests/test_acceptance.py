"""Acceptance suite: eleven numbered criteria, one verdict line each.

Heavy Monte-Carlo fixtures are shared across criteria: a 200-repetition
small-domain run backs criteria 1-2, and a single 10-repetition full-scale
run (d=1024, n=10^6) backs criteria 5, 6, 8, 9, and 10.
"""

import dataclasses
import subprocess
import sys
import time
from pathlib import Path

import cvxpy as cp
import numpy as np
import pytest
from scipy.optimize import brentq

from ldpfreq.core import DomainDistribution, gen_zipf, make_rng
from ldpfreq.harness import (
    ExperimentConfig,
    SetValueQuery,
    TopKQuery,
    bias_variance,
    build_params,
    equivalent_n,
    run_repetitions,
    score_repetitions,
)
from ldpfreq.oracles import EstimateVector, analytic_variance, olh_params
from ldpfreq.postprocess import METHODS, mle_apx, norm_sub

THREADS = 4


def report(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        verdict = "PASS" if ok else "FAIL"
        print(f"ACCEPTANCE {number:2d}: {verdict} - {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def small_raws():
    """200 raw OLH estimate vectors on Zipf d=64, n=5*10^4, eps=1."""
    dist = gen_zipf(64, 50_000, 1.5)
    config = ExperimentConfig(
        dataset=dist, epsilon=1.0, oracle="olh", methods=("base",),
        repetitions=200, base_seed=0,
    )
    start = time.perf_counter()
    reps = run_repetitions(config, threads=THREADS)
    elapsed = time.perf_counter() - start
    raws = np.stack([info["raw"].est for _, info in reps])
    return dist, build_params(config), raws, elapsed


@pytest.fixture(scope="module")
def big_run():
    """One shared full-scale run: Zipf d=1024, n=10^6, eps=1, 10 repetitions."""
    dist = gen_zipf(1024, 10**6, 1.5)
    config = ExperimentConfig(
        dataset=dist, epsilon=1.0, oracle="olh", methods=METHODS,
        repetitions=10, base_seed=0,
    )
    start = time.perf_counter()
    reps = run_repetitions(config, threads=THREADS)
    elapsed = time.perf_counter() - start
    return config, reps, elapsed


@pytest.fixture(scope="module")
def lemma_stats():
    """500-repetition bias/variance on a d=64 domain holding zero-count values."""
    inner = gen_zipf(32, 50_000, 1.5)
    counts = np.concatenate([inner.counts, np.zeros(32, dtype=np.int64)])
    dist = DomainDistribution(counts=counts, n=50_000)
    config = ExperimentConfig(
        dataset=dist, epsilon=1.0, oracle="olh",
        methods=("base-pos", "norm", "norm-sub"), repetitions=500, base_seed=0,
    )
    return dist, bias_variance(config, threads=THREADS)


def test_criterion_01_oracle_unbiasedness(small_raws, capsys):
    dist, params, raws, _ = small_raws
    reps = 50
    mean = raws[:reps].mean(axis=0)
    se = np.sqrt(
        np.array([analytic_variance(params, dist.n, f) for f in dist.freqs]) / reps
    )
    within = np.abs(mean - dist.freqs) <= 4 * se
    frac = within.mean()
    report(
        capsys, 1, frac >= 0.99,
        f"{within.sum()}/{dist.d} values within 4 SE over {reps} reps "
        f"(fraction {frac:.3f} >= 0.99)",
    )


def test_criterion_02_variance_formula(small_raws, capsys):
    dist, params, raws, elapsed = small_raws
    emp = raws.var(axis=0, ddof=1)
    ana = np.array([analytic_variance(params, dist.n, f) for f in dist.freqs])
    mask = dist.freqs >= 0.01
    rel = np.abs(emp[mask] - ana[mask]) / ana[mask]
    report(
        capsys, 2, rel.max() <= 0.15 and elapsed < 120,
        f"max relative deviation {rel.max():.3f} <= 0.15 over {mask.sum()} values "
        f"with f >= 0.01, 200 reps ({elapsed:.0f}s < 120s)",
    )


def test_criterion_03_norm_sub_equals_constrained_least_squares(capsys):
    rng = make_rng(30)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 33))
        f = rng.uniform(-0.5, 1.0, size=d)
        lo, hi = -float(f.max()), 1.0 + float(np.abs(f).max())
        delta = brentq(lambda t: np.maximum(f + t, 0.0).sum() - 1.0, lo, hi, xtol=1e-14)
        oracle = np.maximum(f + delta, 0.0)
        ours = norm_sub(EstimateVector(f)).est.est
        worst = max(worst, float(np.abs(ours - oracle).max()))
    elapsed = time.perf_counter() - start
    report(
        capsys, 3, worst <= 1e-9 and elapsed < 1.0,
        f"max abs difference vs simplex-projection oracle {worst:.2e} <= 1e-9 "
        f"over 100 vectors ({elapsed:.2f}s < 1s)",
    )


def _mle_objective(x, f, params):
    a = params.p - params.q
    b = 1.0 - params.p - params.q
    q1q = params.q * (1.0 - params.q)
    return float(np.sum((x - f) ** 2 * a**2 / (q1q + x * a * b)))


def test_criterion_04_mle_apx_optimality(capsys):
    rng = make_rng(31)
    start = time.perf_counter()
    worst = -np.inf
    for i in range(50):
        epsilon = (0.5, 1.0, 2.0)[i % 3]
        d = int(rng.integers(3, 17))
        params = olh_params(epsilon, d)
        truth = rng.dirichlet(np.ones(d))
        f = truth + rng.normal(0.0, 0.05, size=d)
        ours = mle_apx(EstimateVector(f), params).est.est
        assert ours.min() >= 0.0 and abs(ours.sum() - 1.0) <= 1e-9

        a = params.p - params.q
        b = 1.0 - params.p - params.q
        q1q = params.q * (1.0 - params.q)
        x = cp.Variable(d)
        terms = [cp.quad_over_lin((x[j] - f[j]) * a, q1q + x[j] * a * b) for j in range(d)]
        prob = cp.Problem(cp.Minimize(cp.sum(terms)), [x >= 0, cp.sum(x) == 1])
        prob.solve(solver=cp.CLARABEL)
        oracle_obj = _mle_objective(np.maximum(np.asarray(x.value), 0.0), f, params)
        ours_obj = _mle_objective(ours, f, params)
        worst = max(worst, (ours_obj - oracle_obj) / max(abs(oracle_obj), 1e-12))
    elapsed = time.perf_counter() - start
    report(
        capsys, 4, worst <= 1e-6 and elapsed < 30,
        f"worst relative objective gap vs optimizer oracle {worst:.2e} <= 1e-6 "
        f"over 50 instances ({elapsed:.1f}s < 30s)",
    )


def test_criterion_05_norm_sub_matches_mle_apx(big_run, capsys):
    config, reps, _ = big_run
    result = score_repetitions(config, reps)
    ns, mle = result.mse("norm-sub"), result.mse("mle-apx")
    rel = abs(ns - mle) / min(ns, mle)
    report(
        capsys, 5, rel <= 0.05,
        f"full-domain MSE norm-sub {ns:.3e} vs mle-apx {mle:.3e}, "
        f"relative gap {rel:.4f} <= 0.05",
    )


def test_criterion_06_full_domain_ordering(big_run, capsys):
    config, reps, elapsed = big_run
    result = score_repetitions(config, reps)
    base_mse = result.mse("base")
    ns = result.mse("norm-sub")
    pns = result.mse("power-ns")
    best = min(rec.mse for rec in result.records)
    ok = ns <= base_mse / 5 and pns <= 1.1 * best and elapsed < 300
    report(
        capsys, 6, ok,
        f"MSE norm-sub {ns:.3e} <= base/5 {base_mse / 5:.3e}; "
        f"power-ns {pns:.3e} <= 1.1*min {1.1 * best:.3e} ({elapsed:.0f}s < 300s)",
    )


def test_criterion_07_lemma_suite(lemma_stats, capsys):
    dist, stats = lemma_stats
    zero_value = 32  # first padded zero-count value
    checks = []

    norm_bv = stats["norm"]
    within = np.abs(norm_bv.bias) <= 4 * norm_bv.bias_se
    checks.append(("norm per-value bias ~ 0", bool(within.all())))

    for name in ("norm", "norm-sub"):
        bv = stats[name]
        checks.append(
            (f"{name} sum bias ~ 0", abs(bv.sum_bias) <= max(4 * bv.sum_bias_se, 1e-9))
        )

    bp = stats["base-pos"]
    checks.append(
        ("base-pos positive bias at f=0", bp.bias[zero_value] > 4 * bp.bias_se[zero_value])
    )
    ns = stats["norm-sub"]
    checks.append(
        ("norm-sub positive bias at f=0", ns.bias[zero_value] > 4 * ns.bias_se[zero_value])
    )

    ok = all(flag for _, flag in checks)
    detail = "; ".join(f"{name}: {'ok' if flag else 'VIOLATED'}" for name, flag in checks)
    report(capsys, 7, ok, f"500-rep lemma checks at d=64: {detail}")


def test_criterion_08_set_value_separation(big_run, capsys):
    config, reps, _ = big_run
    set_config = dataclasses.replace(config, query=SetValueQuery(rho=90.0, samples=100))
    result = score_repetitions(set_config, reps)
    ratio = result.mse("power-ns") / result.mse("base-pos")
    report(
        capsys, 8, ratio <= 10**-1.5,
        f"rho=90 subset-sum MSE ratio power-ns/base-pos {ratio:.2e} <= 10^-1.5",
    )


def test_criterion_09_top_k_ordering(big_run, capsys):
    config, reps, _ = big_run
    details = []
    ok = True
    for k in (2, 8, 32):
        result = score_repetitions(dataclasses.replace(config, query=TopKQuery(k=k)), reps)
        n, ns, b = result.mse("norm"), result.mse("norm-sub"), result.mse("base")
        ok = ok and n <= ns and n <= 1.2 * b
        details.append(f"k={k}: norm {n:.2e} <= norm-sub {ns:.2e} and <= 1.2*base {1.2 * b:.2e}")
    report(capsys, 9, ok, "; ".join(details))


def test_criterion_10_equivalent_n(big_run, capsys):
    config, reps, _ = big_run
    result = score_repetitions(config, reps)
    ratios = equivalent_n(config, result)
    n = config.dataset.n
    base_ratio = ratios["base"].n_prime / n
    pns_ratio = ratios["power-ns"].n_prime / n
    ok = 0.8 <= base_ratio <= 1.2 and 6.0 <= pns_ratio <= 14.0
    report(
        capsys, 10, ok,
        f"n'/n base {base_ratio:.2f} in [0.8, 1.2]; power-ns {pns_ratio:.2f} in [6, 14]",
    )


def test_criterion_11_property_suite_standalone(capsys):
    suite = Path(__file__).with_name("test_properties.py")
    start = time.perf_counter()
    completed = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", str(suite)],
        capture_output=True,
        text=True,
    )
    elapsed = time.perf_counter() - start
    ok = completed.returncode == 0 and elapsed < 30
    tail = completed.stdout.strip().split("\n")[-1] if completed.stdout else "no output"
    report(
        capsys, 11, ok,
        f"standalone property suite: {tail} ({elapsed:.1f}s < 30s)",
    )
