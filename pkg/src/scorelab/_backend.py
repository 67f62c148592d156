"""Kernel backend selection.

The compiled extension is used when it imports; otherwise (or when
``SCORELAB_PURE=1``) the numpy fallback is used.  ``SCORELAB_THREADS`` caps
the worker threads used to split lanes; lanes are independent streams, so
the split never changes results.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_PURE = os.environ.get("SCORELAB_PURE", "").strip() not in ("", "0")

kernels = _fallback if (_PURE or _compiled is None) else _compiled
BACKEND = "python" if kernels is _fallback else "compiled"


def get_kernels(name: str | None = None):
    """Return the kernel module for ``"compiled"``, ``"python"`` or the default."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available; build the extension")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


_threads = None


def set_threads(n: int | None) -> None:
    global _threads
    _threads = None if n is None else max(1, int(n))


def thread_count() -> int:
    if _threads is not None:
        return _threads
    env = os.environ.get("SCORELAB_THREADS")
    if env:
        return max(1, int(env))
    return 1


def run_lanes(fn, n: int, backend=None) -> int:
    """Call ``fn(lo, hi, kernels)`` over lane ranges, possibly in threads.

    Returns the summed integer results (kernels report failure counts).
    """
    k = get_kernels(backend)
    threads = thread_count() if k is not _fallback else 1
    if threads <= 1 or n < 2 * threads:
        return int(fn(0, n, k))
    edges = np.linspace(0, n, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futs = [pool.submit(fn, lo, hi, k) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
        return int(sum(f.result() for f in futs))
