"""Independent reference implementations used by the tests.

Nothing here imports the package's algebra: forms are evaluated on vectors by
explicit sums over permutations.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def perm_sign(perm) -> int:
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        for j in range(i + 1, len(perm)):
            if perm[i] > perm[j]:
                sign = -sign
    return sign


def eval_basis(key, vectors) -> float:
    """(dx^{k1} ^ ... ^ dx^{ks})(v_1, ..., v_s) as a signed permutation sum."""
    s = len(key)
    total = 0.0
    for perm in itertools.permutations(range(s)):
        prod = 1.0
        for slot, vi in enumerate(perm):
            prod *= vectors[vi][key[slot]]
        total += perm_sign(perm) * prod
    return total


def eval_form(coeffs: dict, vectors) -> float:
    if not vectors:
        return coeffs.get((), 0.0)
    return sum(c * eval_basis(k, vectors) for k, c in coeffs.items())


def wedge_eval(a: dict, r: int, b: dict, s: int, vectors) -> float:
    """(a ^ b)(v) = 1/(r! s!) sum_sigma sgn(sigma) a(v_sigma[:r]) b(v_sigma[r:])."""
    total = 0.0
    for perm in itertools.permutations(range(r + s)):
        va = [vectors[i] for i in perm[:r]]
        vb = [vectors[i] for i in perm[r:]]
        total += perm_sign(perm) * eval_form(a, va) * eval_form(b, vb)
    return total / (math.factorial(r) * math.factorial(s))


def contract_eval(Z: list, alpha: dict, vectors) -> float:
    """alpha(Z_1, ..., Z_r, v_1, ...): vectors inserted in the leading slots."""
    return eval_form(alpha, list(Z) + list(vectors))


def random_coeffs(rng: np.random.Generator, dim: int, degree: int, density: float = 0.6) -> dict:
    out = {}
    for key in itertools.combinations(range(dim), degree):
        if rng.random() < density:
            out[key] = float(rng.integers(-4, 5))
    return out


def analytic_d_polynomial(dim: int, deg: int, A: dict, B: dict):
    """A degree-``deg`` form field with coefficients a_K + sum_j b_{K,j} x_j^2 and its exact d.

    Returns (coeff_fn, d_fn); ``d_fn(x)`` maps (j,)+K tuples to values in
    the unsorted form d = sum 2 b_{K,j} x_j dx^j ^ dx^K.
    """

    def coeff_fn(x):
        return {K: A.get(K, 0.0) + sum(b * x[j] ** 2 for j, b in B.get(K, {}).items()) for K in set(A) | set(B)}

    def d_fn(x):
        out = {}
        for K, terms in B.items():
            for j, b in terms.items():
                if j in K:
                    continue
                key = (j,) + K
                out[key] = out.get(key, 0.0) + 2.0 * b * x[j]
        return out

    return coeff_fn, d_fn


def rk4_reference(f, y0, t0, dt, steps):
    y = np.array(y0, dtype=float)
    t = t0
    for _ in range(steps):
        k1 = f(t, y)
        k2 = f(t + dt / 2, y + dt / 2 * k1)
        k3 = f(t + dt / 2, y + dt / 2 * k2)
        k4 = f(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return y
