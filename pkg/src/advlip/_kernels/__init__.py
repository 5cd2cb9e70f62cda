"""Kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the numpy
reference takes over.  ``ADVLIP_BACKEND`` forces the choice explicitly:
``native`` (fail if unavailable), ``reference`` (ignore the extension), or
``auto`` (the default behaviour).
"""

import os

from . import _reference
from ._reference import sigmoid

_requested = os.environ.get("ADVLIP_BACKEND", "auto").strip().lower()

if _requested in ("auto", "", "native"):
    try:
        from . import _native as _impl

        BACKEND = "native"
    except ImportError:
        if _requested == "native":
            raise ImportError(
                "ADVLIP_BACKEND=native but the compiled kernel extension is "
                "not available; rebuild the package or unset the variable"
            )
        _impl = _reference
        BACKEND = "reference"
elif _requested in ("reference", "python", "py"):
    _impl = _reference
    BACKEND = "reference"
else:
    raise ValueError(f"unknown ADVLIP_BACKEND value {_requested!r}")

lstm_seq_forward = _impl.lstm_seq_forward
lstm_seq_backward = _impl.lstm_seq_backward

__all__ = ["BACKEND", "lstm_seq_forward", "lstm_seq_backward", "sigmoid"]
