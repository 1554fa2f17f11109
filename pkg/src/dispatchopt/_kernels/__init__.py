"""Hot-loop kernels with backend selection at import time.

Prefers the compiled Cython module; falls back to the NumPy reference
implementation when the extension is unavailable. `BACKEND` names the active
implementation and is recorded in run manifests.
"""

from __future__ import annotations

from dispatchopt._kernels._pure import MASKED_LOGIT

try:  # pragma: no cover - exercised implicitly by whichever backend is active
    from dispatchopt._kernels import _speedups as _impl

    BACKEND = "cython"
except ImportError:  # pragma: no cover
    from dispatchopt._kernels import _pure as _impl

    BACKEND = "python"

dijkstra_csr = _impl.dijkstra_csr
ac_forward = _impl.ac_forward
ac_backward = _impl.ac_backward

__all__ = ["BACKEND", "MASKED_LOGIT", "ac_backward", "ac_forward", "dijkstra_csr"]
