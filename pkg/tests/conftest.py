import numpy as np
import pytest

from fedtoga.numerics import Batch


def scalar_mlp_loss(params, X, y, widths):
    """Pure-python tanh-MLP cross-entropy, one scalar at a time."""
    import math

    params = [float(p) for p in params]
    total = 0.0
    for x, label in zip(X.tolist(), y.tolist()):
        a = list(x)
        off = 0
        for li in range(len(widths) - 1):
            n_in, n_out = widths[li], widths[li + 1]
            W = params[off:off + n_in * n_out]
            off += n_in * n_out
            b = params[off:off + n_out]
            off += n_out
            z = []
            for o in range(n_out):
                s = b[o]
                for k in range(n_in):
                    s += W[o * n_in + k] * a[k]
                z.append(s)
            a = [math.tanh(v) for v in z] if li < len(widths) - 2 else z
        m = max(a)
        lse = m + math.log(sum(math.exp(v - m) for v in a))
        total += lse - a[label]
    return total / len(y)


@pytest.fixture
def seed0_batch():
    g = np.random.default_rng(0)
    return Batch(g.standard_normal((12, 3)), g.integers(0, 3, 12))


@pytest.fixture
def empty_batch():
    return Batch.empty()
