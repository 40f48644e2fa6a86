"""Independent oracles shared by the test modules."""

import numpy as np

from netsense.nn import Activation


def central_difference(fn, x, h=1e-5):
    """Jacobian of ``fn`` at ``x`` by central differences, shape (out, in)."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def max_relative_error(actual, expected):
    """Largest absolute deviation, relative to the largest expected entry."""
    scale = max(np.max(np.abs(expected)), 1e-300)
    return float(np.max(np.abs(np.asarray(actual) - np.asarray(expected))) / scale)


def naive_logits(widths, weights, activation, x):
    """Straight-line re-evaluation without the library's forward pass."""
    act = {
        Activation.RELU: lambda v: [max(t, 0.0) for t in v],
        Activation.RELU6: lambda v: [min(max(t, 0.0), 6.0) for t in v],
        Activation.TANH: lambda v: [float(np.tanh(t)) for t in v],
        Activation.HARD_TANH: lambda v: [min(max(t, -1.0), 1.0) for t in v],
        Activation.HARD_SIGMOID: lambda v: [min(max(t + 0.5, 0.0), 1.0) for t in v],
    }[activation]
    h = [float(v) for v in x]
    for li, w in enumerate(weights):
        z = [sum(float(w[r][c]) * h[c] for c in range(len(h))) for r in range(w.shape[0])]
        h = z if li == len(weights) - 1 else act(z)
    return np.array(h)


def naive_softmax(z):
    z = [float(v) for v in z]
    m = max(z)
    e = [np.exp(v - m) for v in z]
    s = sum(e)
    return np.array([v / s for v in e])
