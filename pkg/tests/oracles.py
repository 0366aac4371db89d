"""Independent reference computations used by the test-suite.

Nothing here calls into the code paths being checked: gradients come from
central finite differences, line-search optima from exhaustive grids.
"""
import numpy as np

H = 1e-5


def numeric_grad(f, x, h=H):
    """Central finite-difference gradient of scalar ``f`` w.r.t. array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-7):
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def cross_entropy_sum(y, raw):
    """Plain-loop softmax cross-entropy, summed over rows."""
    total = 0.0
    for yi, ri in zip(y, raw):
        m = max(ri)
        log_z = m + np.log(sum(np.exp(v - m) for v in ri))
        total -= sum(yk * (rk - log_z) for yk, rk in zip(yi, ri))
    return total


def _grid_k2(f_prev, s_out, labels, g0, g1, chunk=2001):
    true = labels.argmax(axis=1)
    parts = []
    for n in range(f_prev.shape[0]):
        sign = np.where(np.arange(2) == true[n], -1.0, 1.0)
        parts.append((np.exp(sign[0] * (f_prev[n, 0] + g0 * s_out[n, 0])),
                      np.exp(sign[1] * (f_prev[n, 1] + g1 * s_out[n, 1]))))
    best_val, best = np.inf, None
    for i0 in range(0, g0.size, chunk):
        prod = np.ones((min(chunk, g0.size - i0), g1.size))
        for a, b in parts:
            prod *= 1.0 + np.outer(a[i0:i0 + chunk], b)
        j = int(np.argmin(prod))
        r, c = divmod(j, g1.size)
        if prod[r, c] < best_val:
            best_val, best = prod[r, c], (g0[i0 + r], g1[c])
    return np.array(best), float(np.log(best_val))


def grid_argmin_k2(f_prev, s_out, labels, lo=0.0, hi=10.0, step=1e-3, coarse=None):
    """Exhaustive grid minimiser of the two-class ensemble NLL over ``[lo, hi]^2``.

    For K = 2 each row contributes ``log(1 + exp(other - true))`` where the
    exponent splits into a rho_1 part and a rho_2 part, so the objective is
    ``log prod_n (1 + A_n(rho_1) * B_n(rho_2))`` and the grid can be scanned
    with outer products.  With ``coarse`` set, a grid of that spacing is
    scanned first and the ``step`` grid only covers the two coarse cells
    around its minimum (sound because the NLL is convex in rho).
    Returns ``(rho, nll)``.
    """
    def axis(a, b, h):
        return np.linspace(a, b, int(round((b - a) / h)) + 1)

    if coarse is None:
        g = axis(lo, hi, step)
        return _grid_k2(f_prev, s_out, labels, g, g)
    c, _ = _grid_k2(f_prev, s_out, labels, axis(lo, hi, coarse), axis(lo, hi, coarse))
    boxes = [(max(lo, v - coarse), min(hi, v + coarse)) for v in c]
    return _grid_k2(f_prev, s_out, labels, axis(*boxes[0], step), axis(*boxes[1], step))
