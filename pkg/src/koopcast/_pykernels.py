"""Pure numpy implementations of the hot kernels (fallback for ``_ckernels``)."""
import numpy as np


def rollout_linear(K, Z0, P):
    """``out[i, l] = K^(l+1) Z0[i]`` for ``l = 0..P-1``."""
    K = np.asarray(K, dtype=float)
    z = np.array(Z0, dtype=float, ndmin=2)
    out = np.empty((z.shape[0], P, z.shape[1]))
    Kt = K.T
    for step in range(P):
        z = z @ Kt
        out[:, step] = z
    return out


def rollout_relift(K, Z0, P, H, d, quadratic):
    """Re-lifting rollout.

    Each step propagates once with ``K``, keeps only the predicted newest
    position, shifts the history by one slot, recomputes the squared block
    and restores the initial goal entries.
    """
    K = np.asarray(K, dtype=float)
    z = np.array(Z0, dtype=float, ndmin=2)
    n, p = z.shape
    lin = H * d
    goal = z[:, (2 * lin if quadratic else lin):].copy()
    out = np.empty((n, P, p))
    Kt = K.T
    for step in range(P):
        pred = z @ Kt
        new = np.empty_like(z)
        new[:, : lin - d] = z[:, d:lin]
        new[:, lin - d: lin] = pred[:, lin - d: lin]
        if quadratic:
            new[:, lin: 2 * lin] = new[:, :lin] ** 2
        new[:, p - goal.shape[1]:] = goal
        out[:, step] = new
        z = new
    return out


def displacement_errors(candidates, truth):
    """Per-candidate ADE and FDE for ``(k, P, d)`` candidates against ``(P, d)`` truth."""
    c = np.asarray(candidates, dtype=float)
    t = np.asarray(truth, dtype=float)
    dist = np.sqrt(np.sum((c - t[None]) ** 2, axis=-1))
    return dist.mean(axis=1), dist[:, -1].copy()
