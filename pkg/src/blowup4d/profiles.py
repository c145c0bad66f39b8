"""Closed-form radial bubble profiles on R^4.

With ``a = (mu * eps)^2`` and ``r2 = |x - xi|^2``:

    u      = 4 log(mu (1 + eps^2)) - 4 log(a + r2) - log k
    Lap u  = -(16 r2 + 32 a) / (a + r2)^2
    Lap^2 u = 384 a^2 / (a + r2)^4  = rho^4 k e^u
"""

import numpy as np


def bubble_value(r2, mu, eps, k_at_center=1.0):
    a = (mu * eps) ** 2
    return 4.0 * np.log(mu * (1.0 + eps ** 2)) - 4.0 * np.log(a + r2) - np.log(k_at_center)


def bubble_laplacian(r2, mu, eps):
    a = (mu * eps) ** 2
    return -(16.0 * r2 + 32.0 * a) / (a + r2) ** 2


def bubble_bilaplacian(r2, mu, eps):
    a = (mu * eps) ** 2
    return 384.0 * a * a / (a + r2) ** 4


def rho4_of_eps(eps):
    return 384.0 * eps ** 4 / (1.0 + eps ** 2) ** 4
