"""Central finite differences in float64."""
import numpy as np

EPS = 1e-5


def rel_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, x, idx=None, eps=EPS):
    """d f / d x at the flat positions ``idx`` (all positions when None); ``x`` is perturbed in place and restored."""
    flat = x.reshape(-1)
    idx = range(flat.size) if idx is None else idx
    out = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        hi = f(x)
        flat[i] = old - eps
        lo = f(x)
        flat[i] = old
        out[i] = (hi - lo) / (2 * eps)
    return out.reshape(x.shape)


def check_layer(forward, backward, p, x, rng, n_probe=40):
    """Relative errors of analytic vs numeric gradients for w, b and x of one layer.

    The scalar objective is ``sum(y * r)`` for a fixed random ``r``.
    """
    y, _ = forward(x, p)
    r = rng.standard_normal(y.shape)

    def f(_):
        return float((forward(x, p)[0] * r).sum())

    p.zero_grad()
    _, cache = forward(x, p)
    dx = backward(r, cache, p)
    errs = {}
    for name, arr, analytic in (("w", p.w, p.dw), ("b", p.b, p.db), ("x", x, dx)):
        idx = rng.choice(arr.size, size=min(n_probe, arr.size), replace=False)
        num = numeric_grad(f, arr, idx).reshape(-1)[idx]
        errs[name] = rel_error(np.asarray(analytic).reshape(-1)[idx], num)
    return errs
