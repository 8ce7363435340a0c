"""Shared oracles for the unit and acceptance tests."""
import numpy as np

from subband_kd.network import backward, forward, init_params

FD_EPS = 1e-4


def fd_gradient_error(seed: int, w: int = 6, h: int = 5, T: int = 7) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error for each parameter array is max|analytic - numeric| divided by the
    larger of the two gradients' max magnitudes; the worst array is returned.
    """
    rng = np.random.default_rng(seed)
    p = init_params(w, h, rng)
    x = rng.uniform(0.0, 2.0, (T, w))
    up = rng.standard_normal((T, w))
    analytic = backward(p, x, up)
    worst = 0.0
    for name, a in p.arrays.items():
        numeric = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + FD_EPS
            f_plus = np.sum(up * forward(p, x))
            a[idx] = old - FD_EPS
            f_minus = np.sum(up * forward(p, x))
            a[idx] = old
            numeric[idx] = (f_plus - f_minus) / (2 * FD_EPS)
        g = analytic[name]
        scale = max(np.max(np.abs(g)), np.max(np.abs(numeric)), 1e-12)
        worst = max(worst, float(np.max(np.abs(g - numeric)) / scale))
    return worst
