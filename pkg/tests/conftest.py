import numpy as np


def finite_difference_grads(f, arrays, h=1e-6):
    """Central-difference gradients of the scalar ``f()`` w.r.t. ``arrays``.

    ``arrays`` maps names to float64 ndarrays that ``f`` reads; entries are
    perturbed in place and restored.
    """
    grads = {}
    for name, arr in arrays.items():
        grad = np.zeros_like(arr)
        flat, gflat = arr.ravel(), grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads[name] = grad
    return grads


def relative_grad_error(analytic, numeric):
    scale = np.linalg.norm(numeric)
    if scale == 0.0:
        return np.linalg.norm(analytic)
    return np.linalg.norm(analytic - numeric) / scale
