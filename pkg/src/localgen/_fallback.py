"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and results match the compiled module; summation order may differ
in the last bits.
"""
import numpy as np


def _residual_weights(r, squared):
    if squared:
        loss = float(np.mean(np.einsum("bi,bi->b", r, r)))
        return loss, 2.0 * r / len(r)
    norms = np.sqrt(np.einsum("bi,bi->b", r, r))
    loss = float(norms.mean())
    safe = np.where(norms > 0, norms, 1.0)
    # subgradient 0 at zero residual
    w = np.where(norms[:, None] > 0, r / safe[:, None], 0.0)
    return loss, w / len(r)


def linear_loss_grad(M, v, vn, squared=False):
    """Mean residual norm of M v - v' over a batch and its gradient wrt M."""
    r = v @ M.T - vn
    loss, w = _residual_weights(r, squared)
    return loss, w.T @ v


def batched_loss_grad(Ms, v, vn, squared=False):
    """As ``linear_loss_grad`` with one matrix per sample; gradient has Ms' shape."""
    r = np.einsum("bij,bj->bi", Ms, v) - vn
    loss, w = _residual_weights(r, squared)
    return loss, np.einsum("bi,bj->bij", w, v)


@np.errstate(over="ignore", invalid="ignore")
def rollout_fixed(M, v0, steps):
    out = np.empty((steps + 1, 4))
    out[0] = v0
    v = np.asarray(v0, dtype=float)
    for n in range(steps):
        v = M @ v
        out[n + 1] = v
        if not np.isfinite(v).all():
            return out, n + 1
    return out, -1


@np.errstate(over="ignore", invalid="ignore")
def rollout_varying(Ms, v0):
    steps = len(Ms)
    out = np.empty((steps + 1, 4))
    out[0] = v0
    v = np.asarray(v0, dtype=float)
    for n in range(steps):
        v = Ms[n] @ v
        out[n + 1] = v
        if not np.isfinite(v).all():
            return out, n + 1
    return out, -1


def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
    """In-place Adam update of ``p`` (``step`` is the 1-based step count)."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
