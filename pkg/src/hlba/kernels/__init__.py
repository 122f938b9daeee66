"""Hot-loop kernels with a selectable backend.

The compiled (numba) kernels are used by default.  Set ``HLBA_BACKEND=numpy``
before import, or call :func:`set_backend`, to run the pure NumPy/SciPy path
instead; it is also used automatically when numba cannot be imported.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

_BACKENDS = {"numpy": _numpy}
if _numba is not None:
    _BACKENDS["numba"] = _numba

_impl = None
backend = None


def set_backend(name: str) -> None:
    global _impl, backend
    name = name.lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name not in _BACKENDS:
        name = "numpy"
    _impl = _BACKENDS[name]
    backend = name


set_backend(os.environ.get("HLBA_BACKEND", "numba"))


def loglik_particles(alpha, rt, choice, thr, n_thr, s, log_floor=-np.inf):
    """Per-particle log-likelihood for one subject; ``alpha`` is (R, D)."""
    return _impl.loglik_particles(
        np.ascontiguousarray(alpha, dtype=np.float64),
        rt, choice, thr, int(n_thr), s, float(log_floor),
    )


def loglik_subjects(alpha, rt, choice, thr, offsets, subjects, n_thr, s, log_floor=-np.inf):
    """Per-particle log-likelihoods for a batch of subjects; ``alpha`` is (B, R, D)."""
    return _impl.loglik_subjects(
        np.ascontiguousarray(alpha, dtype=np.float64),
        rt, choice, thr, offsets, np.asarray(subjects, dtype=np.int64),
        int(n_thr), s, float(log_floor),
    )
