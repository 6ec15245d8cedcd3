"""Kernel backend selection.

Set ``TAILMINER_NUMBA=0`` to force the vectorized numpy kernels. The flag is
read once, at import time of :mod:`tailminer.kernels`.
"""

from __future__ import annotations

import os

ENV_FLAG = "TAILMINER_NUMBA"

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def numba_requested() -> bool:
    value = os.environ.get(ENV_FLAG, "1").strip().lower()
    return value not in {"0", "false", "no", "off", "numpy"}


def use_numba() -> bool:
    return HAVE_NUMBA and numba_requested()
