"""Backend selection for the hot numeric kernels.

Every hot kernel in this package has two implementations: a numba ``@njit``
version and a pure-numpy one.  The environment variable ``KOOPGP_BACKEND``
picks between them:

* ``auto`` (default): numba when importable, numpy otherwise
* ``numba``: require numba, fail loudly if missing
* ``numpy``: never touch numba

``KOOPGP_THREADS`` caps the numba thread pool (numpy/BLAS threading is
controlled by the usual OMP/BLAS variables).
"""

from __future__ import annotations

import os

_VALID = ("auto", "numba", "numpy")

_choice: str | None = None
_numba_ready: bool | None = None


def _probe_numba() -> bool:
    global _numba_ready
    if _numba_ready is None:
        try:
            import numba

            threads = os.environ.get("KOOPGP_THREADS")
            if threads:
                n = max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS))
                numba.set_num_threads(n)
            _numba_ready = True
        except ImportError:
            _numba_ready = False
    return _numba_ready


def backend() -> str:
    """Resolved backend name, either 'numba' or 'numpy'."""
    global _choice
    if _choice is None:
        set_backend(os.environ.get("KOOPGP_BACKEND", "auto"))
    if _choice == "auto":
        return "numba" if _probe_numba() else "numpy"
    return _choice


def set_backend(name: str) -> None:
    """Override the backend at runtime (used by tests and benchmarks)."""
    global _choice
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}, expected one of {_VALID}")
    if name == "numba" and not _probe_numba():
        raise RuntimeError("KOOPGP_BACKEND=numba but numba is not importable")
    _choice = name


def use_numba() -> bool:
    return backend() == "numba"
