"""Kernel backend selection.

The compiled extension is used when it imports; set ``LOCALGEN_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _fallback

if os.environ.get("LOCALGEN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

linear_loss_grad = _impl.linear_loss_grad
batched_loss_grad = _impl.batched_loss_grad
rollout_fixed = _impl.rollout_fixed
rollout_varying = _impl.rollout_varying
adam_update = _impl.adam_update

__all__ = ["BACKEND", "linear_loss_grad", "batched_loss_grad", "rollout_fixed",
           "rollout_varying", "adam_update"]
