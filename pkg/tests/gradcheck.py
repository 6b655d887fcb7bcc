"""Central finite differences that notice when a step straddles a ReLU kink."""
from contextlib import contextmanager

import numpy as np

from sdaqec import neural


@contextmanager
def relu_signs(store):
    orig = neural.relu

    def recording(x):
        store.append(neural.as_tensor(x).data > 0)
        return orig(x)

    neural.relu = recording
    try:
        yield
    finally:
        neural.relu = orig


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def numeric_grad(f, arr, h=1e-5, min_h=1e-9):
    """d f() / d arr by central differences, perturbing ``arr`` in place.

    If the +h and -h evaluations see different ReLU sign patterns the difference spans a
    kink, so the step is shrunk for that entry until both sides agree.
    """
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        step = h
        while True:
            s_plus, s_minus = [], []
            arr[idx] = old + step
            with relu_signs(s_plus):
                fp = f()
            arr[idx] = old - step
            with relu_signs(s_minus):
                fm = f()
            arr[idx] = old
            if _same(s_plus, s_minus) or step / 10 < min_h:
                break
            step /= 10
        g[idx] = (fp - fm) / (2 * step)
    return g


def rel_error(analytic, numeric):
    """Norm-relative error with a tiny absolute floor for structurally zero gradients."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return diff / scale if scale > 1e-8 else diff
