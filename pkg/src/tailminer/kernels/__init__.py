"""Hot training kernels over flat parameter vectors.

Two interchangeable implementations exist: ``_numba`` (explicit loops,
compiled) and ``_numpy`` (vectorized). The active one is chosen at import
time from the ``TAILMINER_NUMBA`` environment flag; see
:mod:`tailminer._backend`. Results agree to rounding, not bit-for-bit,
since the two routes sum in different orders.
"""

from __future__ import annotations

from tailminer._backend import use_numba

CROSS_ENTROPY = 0
FOCAL = 1
MSE = 2

if use_numba():
    from tailminer.kernels import _numba as _impl

    BACKEND = "numba"
else:
    from tailminer.kernels import _numpy as _impl

    BACKEND = "numpy"

predict = _impl.predict
loss_and_grad = _impl.loss_and_grad
mean_loss = _impl.mean_loss
sgd_epoch = _impl.sgd_epoch

__all__ = [
    "BACKEND",
    "CROSS_ENTROPY",
    "FOCAL",
    "MSE",
    "loss_and_grad",
    "mean_loss",
    "predict",
    "sgd_epoch",
]
