"""Backend selection for the decoding hot loop.

The compiled extension (``dvs2s._fastops``) is used for the beam top-k when it
was built; otherwise the numpy fallback is selected at import. Setting the
environment variable ``DVS2S_BACKEND=python`` forces the fallback.

Row log-softmax always runs in numpy: its vectorised exp beats a scalar
compiled loop by about 4x on float32 rows.
"""
import os

import numpy as np

from dvs2s import _fastops_py

try:
    from dvs2s import _fastops
except ImportError:  # extension not built
    _fastops = None

_BACKENDS = {"python": _fastops_py}
if _fastops is not None:
    _BACKENDS["compiled"] = _fastops


def available_backends():
    return sorted(_BACKENDS)


def _default():
    forced = os.environ.get("DVS2S_BACKEND")
    if forced:
        if forced not in _BACKENDS:
            raise RuntimeError(f"DVS2S_BACKEND={forced!r} is not available; have {available_backends()}")
        return forced
    return "compiled" if "compiled" in _BACKENDS else "python"


_active = _default()


def get_backend():
    return _active


def set_backend(name):
    """Switch the active backend; ``"auto"`` restores the import-time choice."""
    global _active
    if name == "auto":
        name = _default()
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available_backends()}")
    _active = name


def log_softmax_rows(scores):
    return _fastops_py.log_softmax_rows(scores)


def topk_flat(scores, k):
    return _BACKENDS[_active].topk_flat(np.ascontiguousarray(scores), k)
