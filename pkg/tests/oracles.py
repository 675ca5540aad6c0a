"""Independent reference values and helpers for the test-suite.

Frozen tables were computed once with mpmath at 40 digits from the
Fasshauer closed form of the Gaussian-kernel eigenpairs (kernel
exp(-(x-t)^2 / gamma^2), measure density (beta / sqrt(pi)) exp(-beta^2 x^2)):

    eps = 1/gamma, b = (1 + (2 eps / beta)^2)^(1/4), d2 = beta^2 (b^2 - 1) / 2
    lambda_n = sqrt(beta^2 / (beta^2 + d2 + eps^2)) (eps^2 / (beta^2 + d2 + eps^2))^n
    phi_n(x) = sqrt(b / (2^n n!)) exp(-d2 x^2) H_n(beta b x)

None of this uses the package's recurrence.
"""

import math

import numpy as np
from scipy import special

# (gamma, beta) -> {n: lambda_n}
GAUSS_EIGENVALUES = {
    (0.2, 1.0): {0: 0.18099751242241781, 1: 0.14823741291931452, 2: 0.12140680993298381,
                 5: 0.066695834430616343, 10: 0.02457677053601998},
    (0.033, 0.008): {0: 0.00026396515429996801, 1: 0.0002638954766972834, 2: 0.00026382581748705794,
                     5: 0.00026361695016259314, 10: 0.00026326920535145626},
}

# (gamma, beta) -> {(n, x): phi_n(x)}
GAUSS_EIGENFUNCTIONS = {
    (0.2, 1.0): {
        (0, 0.0): 1.780492594683477, (0, 0.3): 1.1848849267627733, (0, 1.7): 3.725981660190059e-6,
        (1, 0.3): 1.5936493529161824, (1, 1.7): 2.8397818266161701e-5,
        (2, 0.0): -1.2589983875531176, (2, 0.3): 0.67779393707975919, (2, 1.7): 0.00015040860448012846,
        (5, 0.3): 0.026568052325062982, (5, 1.7): 0.0072802785398727485,
        (10, 0.0): -0.88326386563586326, (10, 0.3): 0.34910324266374293, (10, 1.7): 0.51274353837327946,
    },
    (0.033, 0.008): {
        (0, 0.0): 9.3294602393166374, (0, 0.3): 9.1281391706970504, (0, 1.7): 4.6304940761335917,
        (1, 0.3): 2.6966310366776039, (1, 1.7): 7.7516521430768185,
        (2, 0.0): -6.5969246000310648, (2, 0.3): -5.8912612529499988, (2, 1.7): 5.9015944354770587,
        (5, 0.3): 3.4795518758382163, (5, 1.7): -3.6588929992301739,
        (10, 0.0): -4.6281434361931804, (10, 0.3): -2.665270514926358, (10, 1.7): -2.8666407672050343,
    },
}

# order-2 multi-Gaussian combination at zero distance, d=1, gamma=1: 1.5 / sqrt(pi)
MULTI_GAUSS_R2_AT_ZERO = 0.84628437532163443


def fasshauer_phi(gamma, beta, n, x):
    """Float64 evaluation of the closed form through scipy's Hermite polynomials (small n only)."""
    eps = 1.0 / gamma
    b = (1.0 + (2.0 * eps / beta) ** 2) ** 0.25
    d2 = beta**2 * (b**2 - 1.0) / 2.0
    x = np.asarray(x, dtype=float)
    return math.sqrt(b / (2.0**n * math.factorial(n))) * np.exp(-d2 * x**2) * special.eval_hermite(n, beta * b * x)


def dense_weighted_eigs(kernel_fn, nodes, weights):
    """Eigenvalues of W^1/2 K W^1/2 by numpy, descending."""
    sw = np.sqrt(weights)
    k = kernel_fn(nodes[:, None], nodes[None, :])
    return np.linalg.eigvalsh(sw[:, None] * k * sw[None, :])[::-1]


def central_difference(fun, params, h=1e-5):
    """Central finite-difference gradient of a scalar function of a list of arrays (in place probing)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = fun()
            p[i] = old - h
            fm = fun()
            p[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def local_legendre(center, half_width, n):
    """Gauss-Legendre nodes and weights on [center - half_width, center + half_width]."""
    u, w = special.roots_legendre(n)
    return center + half_width * u, half_width * w


def r_squared(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    return 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum()), a
