"""Run configuration: flat key-value sections, CLI overrides, stable hash.

The manifest hash covers every reproducibility input (data schema, model,
seeds, grids, hyperparameters) but deliberately excludes the worker count:
thread scheduling must not change any output byte.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields

from .data import ColumnSchema
from .exceptions import ConfigError
from .pipeline import MODELS, HyperOptions, SamplerOptions
from .simex import DEFAULT_LAMBDA_GRID, SimexConfig


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


@dataclass(frozen=True)
class RunConfig:
    """Everything a reproducible run needs."""

    # data
    csv: str | None = None
    outcome: str = "y"
    cohort: str = "cohort"
    covariates: tuple[str, ...] = ()
    categoricals: tuple[str, ...] = ()
    error_prone: str | None = None
    # model
    model: str = "glm"
    # split
    train_per_cohort: int | None = None
    test_per_cohort: int | None = None
    split_seed: int = 0
    # simex
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    n_sims: int = 100
    sigma2_eps: float | None = None
    replicate_file: str | None = None
    extrapolant: str = "quadratic"
    bootstrap_Q: int = 10
    bootstrap_pool: str = "cohort"
    # sampler
    iterations: int = 2000
    burn_in: int = 1000
    chains: int = 1
    sampler_seed: int = 0
    greedy_accept: bool = False
    gamma_scale_variant: str = "gamma"
    target_accept: float = 0.3
    # hypers
    alpha: float = 0.01
    s: float = 0.001
    t: float = 1.0
    u: float = 1.0
    v: float = 1.0
    sigma_e_scale: float | None = None
    prior_mean_C: float | None = None
    prior_mean_gamma: float | None = None
    # run
    seed: int = 0
    threads: int = 1
    waic_draws: int = 400
    eval_true_covariate: str | None = None
    # simulate
    sim_m: int = 10
    sim_n_per: int = 50
    sim_seed: int = 0
    sim_truth: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        needs_simex = self.model in ("glm-simex", "hb-simex")
        if needs_simex:
            if (self.sigma2_eps is None) == (self.replicate_file is None):
                raise ConfigError(
                    "SIMEX models need exactly one of sigma2_eps or replicate_file"
                )
        if (self.train_per_cohort is None) != (self.test_per_cohort is None):
            raise ConfigError("set both train_per_cohort and test_per_cohort or neither")
        if self.gamma_scale_variant not in ("gamma", "printed"):
            raise ConfigError("gamma_scale_variant must be 'gamma' or 'printed'")
        if self.bootstrap_pool not in ("cohort", "global"):
            raise ConfigError("bootstrap_pool must be 'cohort' or 'global'")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")

    def schema(self) -> ColumnSchema:
        if not self.covariates or self.error_prone is None:
            raise ConfigError("data schema needs covariates and error_prone")
        return ColumnSchema(
            outcome=self.outcome,
            cohort=self.cohort,
            covariates=self.covariates,
            categoricals=self.categoricals,
            error_prone=self.error_prone,
        )

    def simex_config(self, sigma2_eps: float) -> SimexConfig:
        return SimexConfig(
            sigma2_eps=sigma2_eps,
            lambda_grid=self.lambda_grid,
            n_sims=self.n_sims,
            extrapolant=self.extrapolant,
            seed=self.seed,
            threads=self.threads,
        )

    def sampler_options(self) -> SamplerOptions:
        return SamplerOptions(
            iterations=self.iterations,
            burn_in=self.burn_in,
            chains=self.chains,
            seed=self.sampler_seed,
            greedy_accept=self.greedy_accept,
            gamma_anchor=self.gamma_scale_variant,
            target_accept=self.target_accept,
        )

    def hyper_options(self) -> HyperOptions:
        return HyperOptions(
            alpha=self.alpha,
            s=self.s,
            t=self.t,
            u=self.u,
            v=self.v,
            sigma_e_scale=self.sigma_e_scale,
            prior_mean_C=self.prior_mean_C,
            prior_mean_gamma=self.prior_mean_gamma,
        )

    def canonical(self) -> str:
        """Stable text form; excludes threads (execution detail)."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name == "threads":
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, dict):
                value = ";".join(f"{k}={value[k]}" for k in sorted(value))
            lines.append(f"{f.name}={value}")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


_SECTION_KEYS = {
    ("data", "csv"): ("csv", str),
    ("data", "outcome"): ("outcome", str),
    ("data", "cohort"): ("cohort", str),
    ("data", "covariates"): ("covariates", _parse_list),
    ("data", "categoricals"): ("categoricals", _parse_list),
    ("data", "error_prone"): ("error_prone", str),
    ("model", "kind"): ("model", str),
    ("split", "train_per_cohort"): ("train_per_cohort", int),
    ("split", "test_per_cohort"): ("test_per_cohort", int),
    ("split", "seed"): ("split_seed", int),
    ("simex", "lambda_grid"): ("lambda_grid", lambda s: tuple(float(v) for v in _parse_list(s))),
    ("simex", "n_sims"): ("n_sims", int),
    ("simex", "sigma2_eps"): ("sigma2_eps", float),
    ("simex", "replicate_file"): ("replicate_file", str),
    ("simex", "extrapolant"): ("extrapolant", str),
    ("simex", "bootstrap_Q"): ("bootstrap_Q", int),
    ("simex", "bootstrap_pool"): ("bootstrap_pool", str),
    ("sampler", "iterations"): ("iterations", int),
    ("sampler", "burn_in"): ("burn_in", int),
    ("sampler", "chains"): ("chains", int),
    ("sampler", "seed"): ("sampler_seed", int),
    ("sampler", "greedy_accept"): ("greedy_accept", _parse_bool),
    ("sampler", "gamma_scale_variant"): ("gamma_scale_variant", str),
    ("sampler", "target_accept"): ("target_accept", float),
    ("hypers", "alpha"): ("alpha", float),
    ("hypers", "s"): ("s", float),
    ("hypers", "t"): ("t", float),
    ("hypers", "u"): ("u", float),
    ("hypers", "v"): ("v", float),
    ("hypers", "sigma_e_scale"): ("sigma_e_scale", float),
    ("hypers", "prior_mean_C"): ("prior_mean_C", float),
    ("hypers", "prior_mean_gamma"): ("prior_mean_gamma", float),
    ("run", "seed"): ("seed", int),
    ("run", "threads"): ("threads", int),
    ("run", "waic_draws"): ("waic_draws", int),
    ("run", "eval_true_covariate"): ("eval_true_covariate", str),
    ("simulate", "m"): ("sim_m", int),
    ("simulate", "n_per"): ("sim_n_per", int),
    ("simulate", "seed"): ("sim_seed", int),
}

_TRUTH_KEYS = {
    "slope_mean", "slope_sd", "log_intercept_mean", "log_intercept_sd", "rho",
    "log_gamma_mean", "log_gamma_sd", "u_mean", "sigma2_u", "sigma2_eps",
}


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse an INI file plus ``section.key=value`` overrides."""
    parser = configparser.ConfigParser()
    if path is not None:
        read = parser.read(path, encoding="utf-8")
        if not read:
            raise ConfigError(f"cannot read config file {path}")
    values: dict = {}
    truth: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            _apply(section, key, raw, values, truth)
    for dotted, raw in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override must look like section.key=value, got {dotted!r}")
        section, key = dotted.split(".", 1)
        _apply(section, key, raw, values, truth)
    if truth:
        values["sim_truth"] = truth
    try:
        config = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return config


def _apply(section: str, key: str, raw: str, values: dict, truth: dict) -> None:
    if section == "simulate" and key in _TRUTH_KEYS:
        try:
            truth[key] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"simulate.{key}: {exc}") from exc
        return
    spec = _SECTION_KEYS.get((section, key))
    if spec is None:
        raise ConfigError(f"unknown config key [{section}] {key}")
    name, cast = spec
    try:
        values[name] = cast(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from exc
