"""Kernel backend selection.

The numeric hot loops (layer norm, softmax, GELU, the Adam update, polyphase
resampling, waveform synthesis, flatline scanning) ship in two interchangeable
implementations: numba-jitted loops and pure numpy. The numpy path is the
reference; the jitted path must agree with it bitwise-or-better (tested to
tight tolerances) and exists only for speed.

Selection happens once at import time:

* ``PLITA_BACKEND=numpy``  forces the reference path.
* ``PLITA_BACKEND=numba``  forces the jitted path, erroring if numba is absent.
* unset                    uses numba when importable, else numpy.

Matrix multiplication is not dispatched: numpy's BLAS is the fast path on
both backends.
"""

import os

_requested = os.environ.get("PLITA_BACKEND", "").strip().lower()

try:
    import numba  # noqa: F401

    _numba_ok = True
except ImportError:
    _numba_ok = False

if _requested not in ("", "numpy", "numba"):
    raise ValueError(
        f"PLITA_BACKEND={_requested!r} not understood: use 'numpy' or 'numba'"
    )
if _requested == "numba" and not _numba_ok:
    raise ImportError("PLITA_BACKEND=numba but numba is not importable")

if _requested:
    ACTIVE = _requested
else:
    ACTIVE = "numba" if _numba_ok else "numpy"


def using_numba():
    return ACTIVE == "numba"
