"""Independent reference implementations used only by the tests."""

import itertools
from fractions import Fraction

import numpy as np


def naive_oui(rows):
    """OUI of a mask given as nested lists, in exact rational arithmetic."""
    B = len(rows)
    d = len(rows[0])
    half = B // 2
    acc = Fraction(0)
    for j in range(d):
        s = 0
        for b in range(B):
            if rows[b][j] == 1:
                s += 1
        u = s if s < B - s else B - s
        acc += Fraction(u, half)
    return float(acc / d)


def all_masks(B, d):
    for bits in itertools.product((0, 1), repeat=B * d):
        yield [list(bits[r * d:(r + 1) * d]) for r in range(B)]


def brute_ranks(x):
    """Average 1-based ranks by counting, O(n^2)."""
    out = []
    for xi in x:
        less = sum(1 for xj in x if xj < xi)
        equal = sum(1 for xj in x if xj == xi)
        out.append(less + (equal + 1) / 2.0)
    return out


def brute_spearman(x, y):
    rx, ry = brute_ranks(x), brute_ranks(y)
    n = len(x)
    mx, my = sum(rx) / n, sum(ry) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    if sxx == 0 or syy == 0:
        return float("nan")
    return sxy / (sxx * syy) ** 0.5


def central_differences(f, params, h=1e-5):
    """Gradient of scalar ``f()`` w.r.t. each array in ``params`` (perturbed in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + h
            fp = f()
            p[i] = orig - h
            fm = f()
            p[i] = orig
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads
