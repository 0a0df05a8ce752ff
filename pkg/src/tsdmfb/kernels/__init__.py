"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The compiled path is used when numba imports cleanly, unless the
environment variable ``TSDMFB_DISABLE_NUMBA`` is set to a truthy value
(``1``, ``true``, ``yes``).  Both paths expose the same functions; tests and
the benchmark import ``_numpy`` and ``_numba`` directly to compare them.
"""
import os

from . import _numpy

_FLAG = os.environ.get("TSDMFB_DISABLE_NUMBA", "").strip().lower()

if _FLAG in ("1", "true", "yes", "on"):
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is optional at runtime
        _impl = _numpy
        BACKEND = "numpy"

gammaln = _impl.gammaln
digamma = _impl.digamma
trigamma = _impl.trigamma
inv_digamma = _impl.inv_digamma
dirichlet_log_norm = _impl.dirichlet_log_norm
component_log_pdf = _impl.component_log_pdf
log_normalize_rows = _impl.log_normalize_rows
dirichlet_objective = _impl.dirichlet_objective
dirichlet_gradient = _impl.dirichlet_gradient
dirichlet_mle = _impl.dirichlet_mle
dirichlet_mle_batch = _impl.dirichlet_mle_batch

__all__ = [
    "BACKEND",
    "gammaln",
    "digamma",
    "trigamma",
    "inv_digamma",
    "dirichlet_log_norm",
    "component_log_pdf",
    "log_normalize_rows",
    "dirichlet_objective",
    "dirichlet_gradient",
    "dirichlet_mle",
    "dirichlet_mle_batch",
]
