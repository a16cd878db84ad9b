"""Backend selection for the hot kernels.

The compiled extension is preferred when importable; set EASEL_KERNELS to
``numpy`` or ``compiled`` to force a backend (``compiled`` raises if the
extension is missing). Both backends share one set of signatures, so the
rest of the package imports only from here.
"""

import os

from . import kernels_numpy

_choice = os.environ.get("EASEL_KERNELS", "auto").lower()

if _choice == "numpy":
    _impl = kernels_numpy
elif _choice == "compiled":
    from . import _fastkernels as _impl
else:
    try:
        from . import _fastkernels as _impl
    except ImportError:
        _impl = kernels_numpy

BACKEND = _impl.BACKEND

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
affine_sample_forward = _impl.affine_sample_forward
affine_sample_backward = _impl.affine_sample_backward
