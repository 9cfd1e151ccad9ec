"""Hierarchical Bayesian NB regression with SIMEX measurement-error correction."""

from ._kernels import BACKEND as kernel_backend
from .data import ColumnSchema, CountDataset, DesignMatrix, build_design, ingest_csv
from .errors import ReplicateSet, bootstrap_replicates, contaminate, estimate_error_variance
from .glm import GlmFit, NBParams, fit_nb_glm, mom_dispersion, nb_logpmf
from .sampler import Chain, FixedHypers, run_chain
from .simex import SimexConfig, SimexTrace, extrapolate, run_simex
from .synthetic import TruthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Chain",
    "ColumnSchema",
    "CountDataset",
    "DesignMatrix",
    "FixedHypers",
    "GlmFit",
    "NBParams",
    "ReplicateSet",
    "SimexConfig",
    "SimexTrace",
    "TruthSpec",
    "bootstrap_replicates",
    "build_design",
    "contaminate",
    "estimate_error_variance",
    "extrapolate",
    "fit_nb_glm",
    "generate",
    "ingest_csv",
    "kernel_backend",
    "mom_dispersion",
    "nb_logpmf",
    "run_chain",
    "run_simex",
]
