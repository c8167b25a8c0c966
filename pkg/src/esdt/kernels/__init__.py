"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The compiled extension is preferred when present; set ``ESDT_KERNELS=pure``
to force the fallback (used by the benchmark and the twin-backend tests).
A whole process uses exactly one backend, so runs stay bit-reproducible.
"""

import os

from . import pure

_choice = os.environ.get("ESDT_KERNELS", "auto")

if _choice == "pure":
    _impl = pure
elif _choice in ("auto", "compiled"):
    try:
        from . import _fastcore as _impl
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = pure
else:
    raise ValueError(f"ESDT_KERNELS must be auto, pure or compiled, got {_choice!r}")

BACKEND_NAME = _impl.BACKEND_NAME
LN_EPS = pure.LN_EPS

layer_norm = _impl.layer_norm
causal_attention = _impl.causal_attention
weighted_noise_sum = _impl.weighted_noise_sum
