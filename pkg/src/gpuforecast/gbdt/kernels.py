"""Histogram kernel backend selection.

The compiled extension is preferred when present; the numpy fallback is
selected otherwise. Both produce bit-identical results, so the choice only
affects speed. Override with GPUFORECAST_KERNELS=py|cy (cy raises if the
extension is missing).
"""

from __future__ import annotations

import os

from ..errors import ConfigError
from . import _hist_py

_CHOICE = os.environ.get("GPUFORECAST_KERNELS", "auto")
if _CHOICE not in ("auto", "py", "cy"):
    raise ConfigError(f"GPUFORECAST_KERNELS must be auto, py, or cy; got {_CHOICE!r}")

if _CHOICE == "py":
    _impl = _hist_py
    BACKEND = "py"
else:
    try:
        from . import _hist_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cy"
    except ImportError:
        if _CHOICE == "cy":
            raise
        _impl = _hist_py
        BACKEND = "py"

build_histograms = _impl.build_histograms
scan_splits = _impl.scan_splits


def available_backends() -> dict[str, object]:
    """Name -> kernel module for every importable backend."""
    backends: dict[str, object] = {"py": _hist_py}
    try:
        from . import _hist_cy

        backends["cy"] = _hist_cy
    except ImportError:
        pass
    return backends
