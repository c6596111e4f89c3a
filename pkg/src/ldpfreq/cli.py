"""Command-line front end: bind flags/config files to harness runs."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace as _dc_replace

from . import core, harness
from .postprocess import METHODS

__all__ = ["main"]


class UsageError(Exception):
    """Bad flag value; exits with status 2 naming the offending flag."""


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config_file(path) -> dict[str, str]:
    """Plain `key = value` config file; keys mirror long flag names."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"config file line {lineno}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merge_config(args: argparse.Namespace) -> None:
    """Fill unset flags from the optional config file; flags win."""
    if getattr(args, "config", None) is None:
        return
    file_values = _load_config_file(args.config)
    for key, value in file_values.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _parse_zipf(text: str) -> tuple[int, int, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError("--zipf expects d,n,s")
    try:
        return int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError:
        raise UsageError("--zipf expects d,n,s as numbers") from None


def _dataset(args) -> core.DomainDistribution:
    if getattr(args, "zipf", None) is not None and getattr(args, "data", None) is not None:
        raise UsageError("--zipf and --data are mutually exclusive")
    if getattr(args, "zipf", None) is not None:
        d, n, s = _parse_zipf(str(args.zipf))
        try:
            return core.gen_zipf(d, n, s)
        except ValueError as exc:
            raise UsageError(f"--zipf: {exc}") from None
    if getattr(args, "data", None) is not None:
        return core.load_counts(args.data)
    raise UsageError("one of --zipf or --data is required")


def _methods(args) -> tuple[str, ...]:
    text = args.methods if args.methods is not None else "all"
    if text == "all":
        return METHODS
    names = tuple(m.strip() for m in str(text).split(",") if m.strip())
    unknown = [m for m in names if m not in METHODS]
    if unknown:
        raise UsageError(f"--methods: unknown method(s) {','.join(unknown)}")
    if not names:
        raise UsageError("--methods: empty method list")
    return names


def _positive_float(args, name: str, default=None) -> float:
    raw = getattr(args, name.replace("-", "_"), None)
    if raw is None:
        if default is None:
            raise UsageError(f"--{name} is required")
        return default
    try:
        value = float(raw)
    except ValueError:
        raise UsageError(f"--{name}: {raw!r} is not a number") from None
    if value <= 0:
        raise UsageError(f"--{name} must be > 0")
    return value


def _int_flag(args, name: str, default: int, minimum: int = 1) -> int:
    raw = getattr(args, name.replace("-", "_"), None)
    try:
        value = default if raw is None else int(raw)
    except ValueError:
        raise UsageError(f"--{name}: {raw!r} is not an integer") from None
    if value < minimum:
        raise UsageError(f"--{name} must be >= {minimum}")
    return value


def _config_from_args(args, query) -> harness.ExperimentConfig:
    dataset = _dataset(args)
    epsilon = _positive_float(args, "epsilon")
    oracle = args.oracle if args.oracle is not None else "olh"
    if oracle not in ("grr", "olh"):
        raise UsageError("--oracle must be grr or olh")
    alpha = _positive_float(args, "alpha", default=2.0)
    grid = getattr(args, "grid", None)
    grid_size = None if grid is None else int(grid)
    if grid_size is not None and grid_size < 2:
        raise UsageError("--grid must be >= 2")
    return harness.ExperimentConfig(
        dataset=dataset,
        epsilon=epsilon,
        oracle=oracle,
        methods=_methods(args),
        repetitions=_int_flag(args, "reps", 30),
        base_seed=_int_flag(args, "seed", 0, minimum=0),
        query=query,
        alpha=alpha,
        grid_size=grid_size,
    )


def _emit(args, text: str) -> None:
    if getattr(args, "out", None) is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_result(args, result: harness.ExperimentResult, metric: str = "mse") -> None:
    fmt = args.format if getattr(args, "format", None) is not None else "csv"
    if fmt == "json":
        _emit(args, harness.result_to_json(result))
    elif fmt == "csv":
        _emit(args, harness.result_to_csv(result, metric=metric))
    else:
        raise UsageError("--format must be csv or json")


def _add_common(sub: argparse.ArgumentParser, *, query_flags: str = "") -> None:
    sub.add_argument("--config", help="optional key = value config file; flags override")
    sub.add_argument("--zipf", help="synthetic Zipf dataset as d,n,s")
    sub.add_argument("--data", help="dataset file of label,count lines")
    sub.add_argument("--epsilon", help="privacy budget (> 0)")
    sub.add_argument("--oracle", help="frequency oracle: grr or olh (default olh)")
    sub.add_argument("--methods", help="comma-separated method ids, or 'all'")
    sub.add_argument("--reps", help="number of repetitions")
    sub.add_argument("--seed", help="base seed; all randomness derives from it")
    sub.add_argument("--alpha", help="base-cut expected false positives (default 2)")
    sub.add_argument("--grid", help="power posterior grid size (default ceil(sqrt(n)))")
    sub.add_argument("--threads", help="worker threads for repetitions (default 1)")
    sub.add_argument("--out", help="output path (default stdout)")
    sub.add_argument("--format", help="output format: csv or json (default csv)")
    if "rho" in query_flags:
        sub.add_argument("--rho", help="subset size as a percentage in (0, 100)")
        sub.add_argument("--set-samples", dest="set_samples", help="random subsets per repetition")
        sub.add_argument("--sets", help="fixed-set file of set_id,member_index lines")
    if "k" in query_flags:
        sub.add_argument("--k", help="number of top true frequencies to score")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldpfreq",
        description="LDP frequency oracles with consistency post-processing",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen-data", help="write a synthetic Zipf dataset as label,count CSV")
    gen.add_argument("--config", help="optional key = value config file; flags override")
    gen.add_argument("--zipf", help="dataset shape as d,n,s")
    gen.add_argument("--out", help="output path (default stdout)")

    for name, flags, helptext in [
        ("run", "", "full-domain MSE per method"),
        ("set-query", "rho", "random or fixed subset-sum MSE per method"),
        ("top-k", "k", "MSE over the k most frequent true values"),
        ("bias-var", "", "per-value empirical bias and variance (count units)"),
        ("equiv-n", "", "analytically equivalent population size per method"),
        ("select-method", "", "pick the best method on a synthesized ground truth"),
    ]:
        sub = subs.add_parser(name, help=helptext)
        _add_common(sub, query_flags=flags)
        if name == "select-method":
            sub.add_argument(
                "--consistency",
                help="consistency method for the synthetic truth: norm-sub or power-ns",
            )
            sub.add_argument("--sim-reps", dest="sim_reps", help="pipeline simulations (default 10)")
            sub.add_argument("--rho", help="optional set-value query percentage")
            sub.add_argument(
                "--set-samples", dest="set_samples", help="random subsets per repetition"
            )
            sub.add_argument("--sets", help="fixed-set file for the query")
            sub.add_argument("--k", help="optional top-k query size")
    return parser


def _query_from_args(args) -> object:
    rho = getattr(args, "rho", None)
    sets = getattr(args, "sets", None)
    k = getattr(args, "k", None)
    chosen = [name for name, val in [("--rho", rho), ("--sets", sets), ("--k", k)] if val is not None]
    if len(chosen) > 1:
        raise UsageError(f"{' and '.join(chosen)} are mutually exclusive")
    if rho is not None:
        rho = float(rho)
        if not (0.0 < rho < 100.0):
            raise UsageError("--rho must be in (0, 100)")
        samples = _int_flag(args, "set-samples", 100)
        return harness.SetValueQuery(rho=rho, samples=samples)
    if sets is not None:
        return harness.FixedSetQuery(sets=harness.load_fixed_sets(sets))
    if k is not None:
        k = int(k)
        if k < 1:
            raise UsageError("--k must be >= 1")
        return harness.TopKQuery(k=k)
    return None


def _cmd_gen_data(args) -> None:
    if args.zipf is None:
        raise UsageError("--zipf is required")
    d, n, s = _parse_zipf(str(args.zipf))
    try:
        dist = core.gen_zipf(d, n, s)
    except ValueError as exc:
        raise UsageError(f"--zipf: {exc}") from None
    width = len(str(d - 1))
    lines = [f"v{i:0{width}d},{int(c)}" for i, c in enumerate(dist.counts)]
    _emit(args, "\n".join(lines) + "\n")


def _cmd_run(args) -> None:
    config = _config_from_args(args, harness.FullDomainQuery())
    threads = _int_flag(args, "threads", 1)
    _progress(f"run: d={config.dataset.d} n={config.dataset.n} reps={config.repetitions}")
    _emit_result(args, harness.run_experiment(config, threads=threads))


def _cmd_set_query(args) -> None:
    query = _query_from_args(args)
    if query is None:
        raise UsageError("one of --rho or --sets is required")
    if isinstance(query, harness.TopKQuery):
        raise UsageError("--k is not valid for set-query")
    config = _config_from_args(args, query)
    threads = _int_flag(args, "threads", 1)
    _progress(f"set-query: d={config.dataset.d} reps={config.repetitions}")
    _emit_result(args, harness.run_experiment(config, threads=threads))


def _cmd_top_k(args) -> None:
    if getattr(args, "k", None) is None:
        raise UsageError("--k is required")
    query = harness.TopKQuery(k=int(args.k))
    try:
        config = _config_from_args(args, query)
    except ValueError as exc:
        raise UsageError(f"--k: {exc}") from None
    threads = _int_flag(args, "threads", 1)
    _progress(f"top-k: k={query.k} reps={config.repetitions}")
    _emit_result(args, harness.run_experiment(config, threads=threads))


def _cmd_bias_var(args) -> None:
    config = _config_from_args(args, harness.FullDomainQuery())
    if args.reps is None:
        config = _dc_replace(config, repetitions=500)
    threads = _int_flag(args, "threads", 1)
    _progress(f"bias-var: reps={config.repetitions}")
    stats = harness.bias_variance(config, threads=threads)
    fmt = args.format if args.format is not None else "csv"
    if fmt == "json":
        import json

        payload = {
            m: {
                "bias": bv.bias.tolist(),
                "variance": bv.variance.tolist(),
                "sum_bias": bv.sum_bias,
                "repetitions": bv.repetitions,
            }
            for m, bv in stats.items()
        }
        _emit(args, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        lines = ["method,metric,param,value,std"]
        for m, bv in stats.items():
            for v in range(bv.bias.size):
                lines.append(f"{m},bias,{v},{bv.bias[v]:.17g},{bv.bias_se[v]:.17g}")
            for v in range(bv.variance.size):
                lines.append(f"{m},variance,{v},{bv.variance[v]:.17g},0")
        _emit(args, "\n".join(lines) + "\n")
    else:
        raise UsageError("--format must be csv or json")


def _cmd_equiv_n(args) -> None:
    config = _config_from_args(args, harness.FullDomainQuery())
    threads = _int_flag(args, "threads", 1)
    _progress(f"equiv-n: n={config.dataset.n} reps={config.repetitions}")
    ratios = harness.equivalent_n(config, threads=threads)
    fmt = args.format if args.format is not None else "csv"
    if fmt == "json":
        import json

        payload = {m: {"n": eq.n, "n_prime": eq.n_prime} for m, eq in ratios.items()}
        _emit(args, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        lines = ["method,metric,param,value,std"]
        for m, eq in ratios.items():
            lines.append(f"{m},n_prime,{eq.n},{eq.n_prime:.17g},0")
        _emit(args, "\n".join(lines) + "\n")
    else:
        raise UsageError("--format must be csv or json")


def _cmd_select_method(args) -> None:
    query = _query_from_args(args)
    config = _config_from_args(args, query if query is not None else harness.FullDomainQuery())
    consistency = args.consistency if args.consistency is not None else "norm-sub"
    if consistency not in ("norm-sub", "power-ns"):
        raise UsageError("--consistency must be norm-sub or power-ns")
    sim_reps = _int_flag(args, "sim-reps", 10)
    threads = _int_flag(args, "threads", 1)
    # one real observation supplies the estimate the synthetic truth is fit from
    procs, info = harness.run_once(config, 0)
    raw = info["raw"]
    _progress("select-method: simulating candidates on synthetic truth")
    selected = harness.select_method_synthetic(
        raw, config, consistency, sim_reps=sim_reps, threads=threads
    )
    _emit(args, selected + "\n")


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "run": _cmd_run,
    "set-query": _cmd_set_query,
    "top-k": _cmd_top_k,
    "bias-var": _cmd_bias_var,
    "equiv-n": _cmd_equiv_n,
    "select-method": _cmd_select_method,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _merge_config(args)
        _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ldpfreq {args.command}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # bad numeric text in a flag is a usage problem, not a runtime one
        print(f"ldpfreq {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError) as exc:
        print(f"ldpfreq {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
