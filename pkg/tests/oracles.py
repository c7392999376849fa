"""Independently computed reference values, frozen before the library was tested.

Each constant was produced by code that shares nothing with the package:

* Riccati values: ``scipy.integrate.solve_ivp`` (rtol 1e-13) on
  ``r' = r^2 / theta - 10`` backward from ``r(1) = 0``, then
  ``s(0) = 0.01 * int_0^1 r dt`` by ``scipy.integrate.quad``.
* Gaussian bridge: twice the minimum over the cross-covariance ``c`` of
  ``KL(N(0, [[a, c], [c, b]]) || N(0, [[a, a], [a, a + T]]))`` with
  ``scipy.optimize.minimize_scalar``.
* Bounded-Lipschitz distance between two Dirac masses: brute force of
  ``max_{m + l <= 1} min(l d, 2 m)`` over 200001 values of ``m``.
"""

import math

# theta = 1, q = 10, sigma = 0.1, T = 1, X0 ~ N(0, 1)
R0_THETA1 = 3.150965825129936
S0_THETA1 = 0.02470920639150137
JSTAR_THETA1 = 3.1756750315214375
# same instance with theta = 2
JSTAR_THETA2 = 4.40220598039715

# N(0, 1) -> N(0, 0.25) over T = 1 with a unit Brownian reference
GAUSS_BRIDGE_VALUE = 1.4103072052063932
# N(0, 1) -> N(0, 2): the free heat flow, zero cost
MATCHED_BRIDGE_VALUE = 0.0

BL_DIRAC = {0.5: 0.4, 1.0: 0.666665, 2.0: 1.0, 100.0: 1.9607800000000002}


def bl_dirac_closed_form(d):
    return 2.0 * d / (d + 2.0)


def riccati_r(t, theta=1.0, q=10.0, T=1.0):
    return math.sqrt(q * theta) * math.tanh(math.sqrt(q / theta) * (T - t))
