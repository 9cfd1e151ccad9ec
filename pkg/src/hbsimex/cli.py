"""Command-line frontend: fit, estimate-error, simulate, diagnose.

Every run writes a manifest (config hash, seeds, versions, kernel backend)
sufficient to reproduce its outputs bit for bit; nothing volatile
(timestamps, hostnames) goes into any output file. Exit codes: 0 success,
2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib import metadata as _metadata
from pathlib import Path

import numpy as np
import scipy

from . import evaluate, pipeline
from ._kernels import BACKEND
from .config import RunConfig, load_config
from .data import ingest_csv, save_csv, with_error_prone
from .errors import (
    bootstrap_replicates,
    error_model_from_replicates,
    estimate_error_variance,
    replicates_from_csv,
    replicates_to_csv,
)
from .exceptions import ConfigError, DataError, HbsimexError, NumericError
from .sampler import draws_to_csv
from .simex import trace_to_csv, trace_to_json
from .synthetic import TruthSpec, generate, truth_from_json, truth_to_json

_EXIT_CONFIG = 2
_EXIT_DATA = 3
_EXIT_NUMERIC = 4


def _package_version() -> str:
    try:
        return _metadata.version("hbsimex")
    except _metadata.PackageNotFoundError:  # pragma: no cover
        return "unknown"


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _manifest(config: RunConfig) -> dict:
    return {
        "config_hash": config.config_hash(),
        "config": config.canonical().splitlines(),
        "seed": config.seed,
        "package_version": _package_version(),
        "python": ".".join(str(v) for v in sys.version_info[:3]),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "kernel_backend": BACKEND,
    }


def _preflight(dataset) -> dict:
    y = dataset.y.astype(float)
    per_cov = {}
    for k, name in enumerate(dataset.covariate_names):
        col = dataset.x[:, k]
        if name in dataset.categorical_levels:
            levels = dataset.categorical_levels[name]
            per_cov[name] = {
                "levels": list(levels),
                "counts": {lev: int(np.sum(col == i)) for i, lev in enumerate(levels)},
            }
        else:
            per_cov[name] = {
                "mean": float(np.mean(col)),
                "sd": float(np.std(col, ddof=1)) if col.size > 1 else 0.0,
                "min": float(np.min(col)),
                "max": float(np.max(col)),
            }
    return {
        "n": dataset.n,
        "m": dataset.m,
        "outcome_mean": float(np.mean(y)),
        "outcome_variance": float(np.var(y, ddof=1)) if y.size > 1 else 0.0,
        "error_prone": dataset.error_prone_name,
        "covariates": per_cov,
    }


def _resolve_sigma2(config: RunConfig, dataset) -> float:
    if config.sigma2_eps is not None:
        return config.sigma2_eps
    if config.replicate_file is None:
        raise ConfigError("SIMEX needs sigma2_eps or replicate_file")
    reps = replicates_from_csv(config.replicate_file)
    return estimate_error_variance(reps)


def _metric_payload(report) -> dict:
    return report.to_dict()


def _write_penalties(path: Path, report) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point", "penalty"])
        for i, p in enumerate(report.per_point_penalty):
            writer.writerow([i, repr(float(p))])


def cmd_fit(args) -> int:
    config = load_config(args.config, _collect_overrides(args))
    config.validate()
    if config.csv is None:
        raise ConfigError("fit needs data.csv (set [data] csv or data.csv=...)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    dataset = ingest_csv(config.csv, config.schema())
    _write_json(out / "preflight.json", _preflight(dataset))
    _write_json(out / "manifest.json", _manifest(config))
    if args.preflight_only:
        return 0

    warnings: list[str] = []
    if config.train_per_cohort is not None:
        split = pipeline.split_dataset(
            dataset, config.train_per_cohort, config.test_per_cohort, config.split_seed
        )
        train, test = split.train, split.test
        warnings.extend(split.warnings)
        if config.eval_true_covariate:
            truth = truth_from_json(config.eval_true_covariate)
            test = with_error_prone(test, truth.U[split.test_indices])
    else:
        train, test = dataset, None
        if config.eval_true_covariate:
            raise ConfigError("eval_true_covariate needs a train/test split")

    simex_config = None
    if config.model in ("glm-simex", "hb-simex"):
        simex_config = config.simex_config(_resolve_sigma2(config, train))

    run = pipeline.run_model(
        config.model,
        train,
        test,
        simex_config=simex_config,
        sampler_options=config.sampler_options(),
        hyper_options=config.hyper_options(),
        waic_draws=config.waic_draws,
        seed=config.seed,
    )

    report = {
        "model": run.model,
        "params": run.params,
        "warnings": list(warnings) + list(run.warnings),
        "train_records": train.n,
        "test_records": test.n if test is not None else None,
    }
    _write_json(out / "report.json", report)
    _write_json(out / "metrics_train.json", _metric_payload(run.metrics_train))
    _write_penalties(out / "per_point_penalty_train.csv", run.metrics_train)
    if run.metrics_test is not None:
        _write_json(out / "metrics_test.json", _metric_payload(run.metrics_test))
        _write_penalties(out / "per_point_penalty_test.csv", run.metrics_test)
    if run.simex_trace is not None:
        trace_to_csv(run.simex_trace, out / "simex_trace.csv")
        _write_json(out / "simex_trace.json", trace_to_json(run.simex_trace))
    if run.chain is not None:
        draws_to_csv(run.chain, out / "draws.csv")
        _write_json(out / "chain_summary.json", evaluate.chain_summary(run.chain))
    return 0


def cmd_estimate_error(args) -> int:
    config = load_config(args.config, _collect_overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if config.replicate_file is not None:
        reps = replicates_from_csv(config.replicate_file)
        x = np.asarray([float(np.mean(r)) for r in reps.replicates])
        source = "replicate_file"
    else:
        if config.csv is None:
            raise ConfigError("estimate-error needs a replicate_file or data csv")
        dataset = ingest_csv(config.csv, config.schema())
        x = dataset.x[:, dataset.error_prone_index]
        cohorts = dataset.cohorts if config.bootstrap_pool == "cohort" else None
        reps = bootstrap_replicates(x, config.bootstrap_Q, config.seed, cohorts=cohorts)
        replicates_to_csv(reps, out / "replicates.csv")
        source = f"bootstrap(Q={config.bootstrap_Q}, pool={config.bootstrap_pool})"

    model = error_model_from_replicates(reps, x)
    counts = reps.counts
    payload = {
        "sigma2_eps": model.sigma2_eps,
        "sigma2_u": model.sigma2_u,
        "mean_u": model.mean_u,
        "records": int(counts.shape[0]),
        "df": int(np.sum(counts - 1)),
        "replicates_min": int(counts.min()),
        "replicates_max": int(counts.max()),
        "source": source,
    }
    _write_json(out / "error_variance.json", payload)
    _write_json(out / "manifest.json", _manifest(config))
    return 0


def cmd_simulate(args) -> int:
    config = load_config(args.config, _collect_overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth_kwargs = dict(config.sim_truth)
    spec = TruthSpec(**truth_kwargs)
    dataset, truth = generate(config.sim_m, config.sim_n_per, spec, config.sim_seed)
    save_csv(dataset, out / "dataset.csv")
    truth_to_json(truth, out / "truth.json")
    _write_json(out / "manifest.json", _manifest(config))
    return 0


def cmd_diagnose(args) -> int:
    draws_path = Path(args.draws)
    if not draws_path.exists():
        raise DataError(f"draws file {draws_path} does not exist")
    traces: dict[tuple[str, str], list[float]] = {}
    with open(draws_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"iteration", "cohort", "parameter", "value"}.issubset(
            reader.fieldnames
        ):
            raise DataError("draws CSV needs iteration, cohort, parameter, value columns")
        for row in reader:
            traces.setdefault((row["cohort"], row["parameter"]), []).append(float(row["value"]))
    if not traces:
        raise DataError("draws file has no draws")

    thin = max(1, args.thin)
    report: dict[str, dict[str, float]] = {}
    for (cohort, parameter), values in sorted(traces.items()):
        trace = np.asarray(values)[::thin]
        try:
            dw = evaluate.durbin_watson(trace)
        except HbsimexError:
            dw = None
        report.setdefault(cohort, {})[parameter] = dw

    payload = {"thin": thin, "durbin_watson": report}
    summary_path = draws_path.parent / "chain_summary.json"
    if summary_path.exists():
        with open(summary_path, encoding="utf-8") as fh:
            summary = json.load(fh)
        payload["acceptance"] = {
            cohort: entry.get("acceptance")
            for cohort, entry in summary.get("cohorts", {}).items()
        }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "diagnose.json", payload)
    else:
        json.dump(payload, sys.stdout, indent=1, sort_keys=True)
        sys.stdout.write("\n")
    return 0


def _collect_overrides(args) -> dict[str, str]:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "data", None):
        overrides["data.csv"] = args.data
    if getattr(args, "model", None):
        overrides["model.kind"] = args.model
    if getattr(args, "threads", None) is not None:
        overrides["run.threads"] = str(args.threads)
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = str(args.seed)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hbsimex",
        description="Hierarchical Bayesian NB regression with SIMEX error correction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--threads", type=int, help="worker cap for SIMEX cells")
        p.add_argument("--seed", type=int, help="run seed override")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p_fit = sub.add_parser("fit", help="run one of the estimation pipelines")
    common(p_fit)
    p_fit.add_argument("--data", help="data CSV (shorthand for data.csv)")
    p_fit.add_argument("--model", choices=pipeline.MODELS, help="model kind override")
    p_fit.add_argument("--preflight-only", action="store_true",
                       help="stop after writing dataset summary")
    p_fit.set_defaults(func=cmd_fit)

    p_err = sub.add_parser("estimate-error", help="estimate the measurement-error variance")
    common(p_err)
    p_err.add_argument("--data", help="data CSV for bootstrap replicates")
    p_err.set_defaults(func=cmd_estimate_error)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_diag = sub.add_parser("diagnose", help="Durbin-Watson / acceptance report for a draws file")
    p_diag.add_argument("--draws", required=True, help="draws CSV produced by fit")
    p_diag.add_argument("--thin", type=int, default=1, help="thinning before DW")
    p_diag.add_argument("--out", help="output directory (default: print)")
    p_diag.add_argument("--set", action="append", help=argparse.SUPPRESS)
    p_diag.set_defaults(func=cmd_diagnose)
    return parser


def _error_payload(exc: HbsimexError, code: int) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HbsimexError as exc:
        if isinstance(exc, ConfigError):
            code = _EXIT_CONFIG
        elif isinstance(exc, DataError):
            code = _EXIT_DATA
        elif isinstance(exc, NumericError):
            code = _EXIT_NUMERIC
        else:  # pragma: no cover - base class fallthrough
            code = 1
        payload = _error_payload(exc, code)
        json.dump(payload, sys.stderr, indent=1, sort_keys=True)
        sys.stderr.write("\n")
        out = getattr(args, "out", None)
        if out and Path(out).is_dir():
            _write_json(Path(out) / "error.json", payload)
        return code


if __name__ == "__main__":
    sys.exit(main())
