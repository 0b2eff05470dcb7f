"""Convolution kernel backend, selected once at import.

The compiled Cython extension is preferred when it was built; otherwise the
NumPy im2col kernels are used.  Set SPIKEADAPT_KERNELS=numpy or =cython to
force a backend (forcing cython raises if the extension is unavailable).
Both backends are deterministic; they may differ in the last couple of ulps
because they sum in different orders.
"""

import os

from . import conv_numpy

_forced = os.environ.get("SPIKEADAPT_KERNELS", "").strip().lower()

if _forced == "numpy":
    _impl, backend = conv_numpy, "numpy"
else:
    try:
        from . import _convext as _impl
        backend = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        _impl, backend = conv_numpy, "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight
out_hw = conv_numpy.out_hw
