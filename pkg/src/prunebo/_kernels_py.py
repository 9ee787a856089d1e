"""Pure-NumPy implementations of the numerical hot paths.

Mirrors the API of the compiled ``prunebo._kernels`` extension; see
:mod:`prunebo.backend` for how one of the two gets selected at import time.
The two backends agree to floating-point roundoff but are not guaranteed
bit-identical (operation order differs).
"""

import numpy as np
from scipy.special import ndtr

SOBOL_BITS = 32
_SOBOL_SCALE = 1.0 / np.float64(2.0) ** SOBOL_BITS
_INV_SQRT_2PI = 0.3989422804014326779399461


def sobol_fill(directions: np.ndarray, start: int, count: int) -> np.ndarray:
    """Raw Sobol points ``start .. start+count-1`` in [0,1)^d.

    ``directions`` is the (d, 32) uint64 matrix of direction integers scaled
    to 32 fractional bits. Uses the Gray-code ordering, so point ``i`` is the
    XOR of direction columns selected by the bits of ``i ^ (i >> 1)``.
    """
    if count == 0:
        return np.empty((0, directions.shape[0]))
    idx = np.arange(start, start + count, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    acc = np.zeros((count, directions.shape[0]), dtype=np.uint64)
    for bit in range(SOBOL_BITS):
        mask = (gray >> np.uint64(bit)) & np.uint64(1)
        acc ^= mask[:, None] * directions[None, :, bit]
    return acc.astype(np.float64) * _SOBOL_SCALE


def ard_sqdist(x: np.ndarray, z: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Pairwise sum_j ((x_ij - z_kj) / ls_j)^2, shape (len(x), len(z))."""
    xs = x / lengthscales
    zs = z / lengthscales
    d2 = (
        np.sum(xs * xs, axis=1)[:, None]
        + np.sum(zs * zs, axis=1)[None, :]
        - 2.0 * (xs @ zs.T)
    )
    return np.maximum(d2, 0.0)


def ei_values(mu: np.ndarray, var: np.ndarray, best: float, sigma_floor: float) -> np.ndarray:
    """Closed-form expected improvement over ``best`` for a batch of posteriors.

    Entries with a posterior deviation below ``sigma_floor`` degrade to the
    deterministic improvement ``max(mu - best, 0)``.
    """
    sigma = np.sqrt(np.maximum(var, 0.0))
    delta = mu - best
    out = np.maximum(delta, 0.0)
    live = sigma >= sigma_floor
    if np.any(live):
        s = sigma[live]
        d = delta[live]
        z = d / s
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        out[live] = d * ndtr(z) + s * pdf
    return np.maximum(out, 0.0)
