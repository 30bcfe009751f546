"""Kernel selection: compiled extension when available, NumPy fallback otherwise.

Set PEFTLAB_PURE_PYTHON=1 to force the fallback (used by the benchmark and
the parity tests).
"""

import os

if os.environ.get("PEFTLAB_PURE_PYTHON"):
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pykernels as _impl

COMPILED: bool = _impl.COMPILED
IMPLEMENTATION: str = "compiled" if COMPILED else "python"

ctc_forward_backward = _impl.ctc_forward_backward
dtw_accumulate = _impl.dtw_accumulate
