import numpy as np
import pytest


def central_difference(loss_fn, array, step=1e-6):
    """Finite-difference gradient of scalar loss_fn() w.r.t. ``array``,
    perturbing the array in place."""
    flat = array.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = loss_fn()
        flat[i] = keep - step
        lo = loss_fn()
        flat[i] = keep
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(array.shape)


def max_rel_error(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
