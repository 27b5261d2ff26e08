"""Independent oracles for cross-checking the package against first principles.

Everything here is deliberately built from different machinery than the
implementation under test: rows come from adaptive quadrature instead of
closed-form moments, and the admissibility threshold comes from bracketed
bisection instead of the fixed-point iteration.
"""

import math

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq


def caputo_power(t, p, alpha):
    """Closed-form fractional derivative of t^p of order alpha in (0,1), p > 0."""
    return math.gamma(p + 1.0) / math.gamma(p + 1.0 - alpha) * t ** (p - alpha)


def _lagrange_deriv(nodes, k):
    """Derivative of the k-th Lagrange basis polynomial over up to 3 nodes."""
    xs = [x for i, x in enumerate(nodes) if i != k]
    den = 1.0
    for x in xs:
        den *= nodes[k] - x
    if len(xs) == 1:
        return lambda s: 1.0 / den
    a, b = xs
    return lambda s: (2.0 * s - a - b) / den


def quad_row(mesh, alpha, m, variant="standard", K=1):
    """Row m of the discrete operator by adaptive quadrature of the kernel
    against the piecewise interpolant derivative. Slow; verification only."""
    t = mesh.nodes
    coeffs = np.zeros(m + 1)
    linear = (m == 1) or (variant == "l1_start" and m <= K)

    def accumulate(jlo_node, nodes_idx, lo, hi, singular):
        for k, node in enumerate(nodes_idx):
            dL = _lagrange_deriv([t[i] for i in nodes_idx], k)
            if singular:
                val, _ = quad(dL, lo, hi, weight="alg", wvar=(0.0, -alpha),
                              epsabs=1e-13, epsrel=1e-12, limit=300)
            else:
                val, _ = quad(lambda s: (t[m] - s) ** (-alpha) * dL(s), lo, hi,
                              epsabs=1e-14, epsrel=1e-12, limit=300)
            coeffs[node] += val

    if linear:
        for j in range(1, m + 1):
            accumulate(j, [j - 1, j], t[j - 1], t[j], singular=(j == m))
    else:
        for j in range(1, m - 1):
            accumulate(j, [j - 1, j, j + 1], t[j - 1], t[j], singular=False)
        # the last two intervals share the quadratic through the last 3 nodes
        accumulate(m - 1, [m - 2, m - 1, m], t[m - 2], t[m - 1], singular=False)
        accumulate(m, [m - 2, m - 1, m], t[m - 1], t[m], singular=True)
    return coeffs / math.gamma(1.0 - alpha)


def bisect_sigma_bar(alpha, theta):
    """Admissibility threshold via bracketed bisection on g_L - g_R."""
    c = (2.0 + 5.0 * alpha - alpha * alpha) / (4.0 * alpha)
    a_prime = 4.0 * alpha / ((1.0 - alpha) * (2.0 - alpha))
    nu = 1.0 - (1.0 - alpha) / 48.0
    b = nu * nu * theta * (2.0 - theta)

    def g_left(s):
        return (1.0 - s) * (c * (1.0 + s) - s)

    def g_right(s):
        return 1.0 + math.sqrt((1.0 + (1.0 - s * s) / a_prime) ** 2 - b)

    def h(s):
        return g_left(s) - g_right(s)

    assert h(0.0) > 0.0
    hi = 0.02
    while h(hi) > 0.0:
        hi += 0.02
        if hi >= 1.0:
            raise RuntimeError("no sign change below sigma = 1")
    return brentq(h, hi - 0.02, hi, xtol=1e-15, rtol=8.9e-16)


def random_admissible_mesh(rng, alpha, theta=1.0, M=None, slack=0.9):
    """Random mesh with nonincreasing skews bounded by slack * sigma_bar.

    Such meshes satisfy the certification hypotheses by construction, which
    makes them suitable inputs for factorization and sign-pattern checks.
    """
    from fracl2 import sigma_bar
    from fracl2.mesh import TemporalMesh

    if M is None:
        M = int(rng.integers(8, 65))
    sb = sigma_bar(alpha, theta)
    sig = np.sort(rng.uniform(0.0, slack * sb, size=M - 1))[::-1]
    rho = (1.0 + sig) / (1.0 - sig)
    tau = np.concatenate([[1.0], np.cumprod(rho)])
    nodes = np.concatenate([[0.0], np.cumsum(tau)])
    nodes /= nodes[-1]
    nodes[-1] = 1.0
    return TemporalMesh(nodes)


def random_rho_mesh(rng, M, rho_lo=1.0, rho_hi=3.0, T=1.0):
    """Random mesh with independent step ratios in [rho_lo, rho_hi]."""
    from fracl2.mesh import TemporalMesh

    rho = rng.uniform(rho_lo, rho_hi, size=M - 1)
    tau = np.concatenate([[1.0], np.cumprod(rho)])
    nodes = np.concatenate([[0.0], np.cumsum(tau)])
    nodes *= T / nodes[-1]
    nodes[-1] = T
    return TemporalMesh(nodes)


def agrees_3sig(value, reference):
    """True when value matches reference in its first three significant digits,
    allowing half a unit in the third digit for the reference's own rounding."""
    if reference == 0.0:
        return value == 0.0
    ulp3 = 10.0 ** (math.floor(math.log10(abs(reference))) - 2)
    return abs(value - reference) <= 0.551 * ulp3
