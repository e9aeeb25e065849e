"""Elementwise numeric kernels with twin numpy / numba implementations.

These are the inner loops of training: activation forwards and backwards,
row softmax and dropout mask application run once per layer per molecule per
epoch.  Each kernel has a pure-numpy body; when numba is importable the same
body is compiled with ``@njit`` (array expressions fuse into single passes,
which is where the win comes from on small matrices).

Backend selection happens once at import time:

* default: numba when importable, numpy otherwise;
* ``MOLCALIB_NO_NUMBA=1`` (or ``true``/``yes``) forces the numpy path.

Both variants stay importable regardless of the selection (``NUMPY_KERNELS``
and ``NUMBA_KERNELS``) so the benchmark can compare them side by side.
"""

from __future__ import annotations

import os

import numpy as np


def _relu_forward(x):
    return np.maximum(x, 0.0)


def _relu_backward(g, x):
    return np.where(x > 0.0, g, 0.0)


def _sigmoid_forward(x):
    # tanh form never overflows, unlike 1/(1+exp(-x)) for large negative x
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _sigmoid_backward(g, s):
    return g * s * (1.0 - s)


def _tanh_forward(x):
    return np.tanh(x)


def _tanh_backward(g, t):
    return g * (1.0 - t * t)


def _softmax_rows(x):
    # subtract the row max; exp overflow is the failure mode this avoids
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        e = np.exp(row - row.max())
        out[i] = e / e.sum()
    return out


def _softmax_rows_backward(g, s):
    out = np.empty_like(s)
    for i in range(s.shape[0]):
        inner = (g[i] * s[i]).sum()
        out[i] = s[i] * (g[i] - inner)
    return out


def _scale_mask(x, mask, scale):
    return x * mask * scale


_BODIES = {
    "relu_forward": _relu_forward,
    "relu_backward": _relu_backward,
    "sigmoid_forward": _sigmoid_forward,
    "sigmoid_backward": _sigmoid_backward,
    "tanh_forward": _tanh_forward,
    "tanh_backward": _tanh_backward,
    "softmax_rows": _softmax_rows,
    "softmax_rows_backward": _softmax_rows_backward,
    "scale_mask": _scale_mask,
}

NUMPY_KERNELS = dict(_BODIES)

try:
    from numba import njit

    NUMBA_KERNELS = {name: njit(cache=True)(fn) for name, fn in _BODIES.items()}
except ImportError:  # pragma: no cover - sandbox always has numba
    NUMBA_KERNELS = None

_disabled = os.environ.get("MOLCALIB_NO_NUMBA", "").strip().lower() in (
    "1", "true", "yes",
)
if NUMBA_KERNELS is not None and not _disabled:
    BACKEND = "numba"
    _ACTIVE = NUMBA_KERNELS
else:
    BACKEND = "numpy"
    _ACTIVE = NUMPY_KERNELS

relu_forward = _ACTIVE["relu_forward"]
relu_backward = _ACTIVE["relu_backward"]
sigmoid_forward = _ACTIVE["sigmoid_forward"]
sigmoid_backward = _ACTIVE["sigmoid_backward"]
tanh_forward = _ACTIVE["tanh_forward"]
tanh_backward = _ACTIVE["tanh_backward"]
softmax_rows = _ACTIVE["softmax_rows"]
softmax_rows_backward = _ACTIVE["softmax_rows_backward"]
scale_mask = _ACTIVE["scale_mask"]


def use_backend(name: str) -> None:
    """Rebind the module-level kernels to one backend at runtime.

    Meant for benchmarking both paths in one process; normal selection
    happens once at import via ``MOLCALIB_NO_NUMBA``.  Note that callers
    holding `from`-imported copies of individual kernels or of ``BACKEND``
    keep their old bindings.
    """
    global BACKEND
    if name == "numba" and NUMBA_KERNELS is None:
        raise RuntimeError("numba backend requested but numba is not "
                           "importable")
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}")
    table = NUMPY_KERNELS if name == "numpy" else NUMBA_KERNELS
    for key, fn in table.items():
        globals()[key] = fn
    BACKEND = name


def warm_up() -> None:
    """Trigger JIT compilation of every kernel on toy inputs."""
    x2 = np.array([[0.5, -1.0], [2.0, 0.0]])
    x1 = np.array([0.25, -0.75])
    for x in (x2, x1):
        relu_backward(relu_forward(x), x)
        sigmoid_backward(x, sigmoid_forward(x))
        tanh_backward(x, tanh_forward(x))
        scale_mask(x, np.ones_like(x), 2.0)
    softmax_rows_backward(x2, softmax_rows(x2))
