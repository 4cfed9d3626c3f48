"""Independent reference implementations used to cross-check the package.

Everything here deliberately avoids the package's own combinatorial code
paths: the forcing-term oracle works through generating-polynomial
convolution instead of enumerating compositions, and contractions use
broadcast-multiply-sum instead of reshaped matrix products.
"""

import math

import numpy as np


def _contract(val, h):
    """Contract the last tensor axis with batched vectors (broadcast route)."""
    n, d = h.shape
    extra = val.ndim - 2  # tensor axes left untouched
    return (val * h.reshape((n,) + (1,) * extra + (d,))).sum(axis=-1)


def fm_polynomial_oracle(deriv, m, h_arrays):
    """Order-m forcing via the t-power expansion of the flux.

    With z(t) = sum_{j>=1} (t^j/j!) h_j, the forcing equals m! times the
    t^m coefficient of sum_{k>=2} (1/k!) T_{k+1} . z(t)^{tensor k}, where
    T_{k+1} = deriv(k+1) is the (k+1)-st derivative tensor batch.  The
    polynomial arithmetic below never enumerates compositions.
    """
    if m == 1:
        n, d = h_arrays[0].shape if h_arrays else (1, 1)
        return np.zeros((n, d))
    n, d = h_arrays[0].shape
    # z[r] is the vector coefficient of t^r (r = 0 unused, h_j/j! at r=j)
    z = [np.zeros((n, d))]
    for j in range(1, m):
        z.append(h_arrays[j - 1] / math.factorial(j))
    total = np.zeros((n, d))
    for k in range(2, m + 1):
        poly = {0: deriv(k + 1)}
        for _ in range(k):
            grown = {}
            for power, val in poly.items():
                for r in range(1, len(z)):
                    q = power + r
                    if q > m:
                        continue
                    piece = _contract(val, z[r])
                    grown[q] = piece if q not in grown else grown[q] + piece
            poly = grown
        if m in poly:
            total += poly[m] / math.factorial(k)
    return math.factorial(m) * total
