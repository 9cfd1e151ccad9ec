"""Kernel backend selection: compiled extension if built, numpy otherwise."""

import os

if os.environ.get("HBSIMEX_PURE_PYTHON"):
    from . import reference as _impl

    BACKEND = "python"
else:
    try:
        from . import _nbloglik as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import reference as _impl

        BACKEND = "python"

nb_loglik_sum = _impl.nb_loglik_sum
nb_logpmf_out = _impl.nb_logpmf_out

__all__ = ["BACKEND", "nb_loglik_sum", "nb_logpmf_out"]
