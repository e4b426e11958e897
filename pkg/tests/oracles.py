"""Independent reference computations used by the test-suite."""

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at flat vector ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    """Max absolute difference scaled by the larger max-magnitude of the two.

    ``floor`` keeps finite-difference round-off (~1e-11 absolute at h=1e-5)
    from dominating when a whole gradient is nearly zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


def straight_line_mlp(x, layers, hidden="relu", out="identity", ln=False, eps=1e-6):
    """Unvectorized loop-per-unit MLP evaluation for a single input vector.

    ``layers`` is a list of dicts with keys W (in, out), b, and optionally
    gain/bias for layer-normalized hidden layers.
    """
    import math

    def act(name, v):
        if name == "relu":
            return max(v, 0.0)
        if name == "tanh":
            return math.tanh(v)
        if name == "sigmoid":
            return 1.0 / (1.0 + math.exp(-v))
        return v

    h = [float(v) for v in x]
    for li, p in enumerate(layers):
        W, b = p["W"], p["b"]
        z = []
        for j in range(W.shape[1]):
            s = b[j]
            for i in range(W.shape[0]):
                s += h[i] * W[i, j]
            z.append(s)
        last = li == len(layers) - 1
        if "gain" in p:
            mu = sum(z) / len(z)
            var = sum((v - mu) ** 2 for v in z) / len(z)
            z = [(v - mu) / math.sqrt(var + eps) * p["gain"][j] + p["bias"][j] for j, v in enumerate(z)]
        h = [act(out if last else hidden, v) for v in z]
    return np.array(h)
