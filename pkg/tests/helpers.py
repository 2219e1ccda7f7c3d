"""Shared test utilities: the 64-bit central finite-difference oracle."""

import numpy as np

FD_H = 1e-3


def fd_gradient(f, x, h=FD_H):
    """Central finite differences of scalar f() wrt array x, in float64.

    f must close over x; x is perturbed in place and restored.
    """
    assert x.dtype == np.float64
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic, fd, floor=1e-4):
    """Elementwise |a-f| / max(|a|,|f|,floor), maximised over the array."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return float(np.max(np.abs(a - f) / denom))


def fd_gradient_masked(f_and_signs, x, h=FD_H):
    """Like fd_gradient but f_and_signs() returns (loss, relu_input_signs).

    Coordinates where any ReLU input changes sign between the +h and -h
    evaluations are reported as invalid (finite differences straddle a kink
    there); the caller excludes them from the comparison.
    """
    assert x.dtype == np.float64
    g = np.zeros_like(x)
    valid = np.ones(x.size, dtype=bool)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp, sp = f_and_signs()
        flat[i] = orig - h
        fm, sm = f_and_signs()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
        if not np.array_equal(sp, sm):
            valid[i] = False
    return g, valid.reshape(x.shape)
