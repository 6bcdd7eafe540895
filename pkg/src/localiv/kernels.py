"""Backend selection for the sampler kernels.

The compiled extension is used when it imports cleanly; setting the
environment variable ``LOCALIV_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("LOCALIV_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

log_sigmoid = _impl.log_sigmoid
sigmoid = _impl.sigmoid
truncnorm_draw = _impl.truncnorm_draw
ordinal_loglik = _impl.ordinal_loglik
ordinal_cumsum = _impl.ordinal_cumsum
stratum_mh_ordinal = _impl.stratum_mh_ordinal

__all__ = [
    "BACKEND", "log_sigmoid", "sigmoid", "truncnorm_draw", "ordinal_loglik",
    "ordinal_cumsum", "stratum_mh_ordinal",
]
