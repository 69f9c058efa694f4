"""Independent reference computations used by the tests.

Nothing here calls the package's solvers; each oracle works from the model
matrices with plain dense linear algebra.
"""

from __future__ import annotations

import numpy as np


def stacked_solve(model, regimes, w_b0, w_s0, horizon=400, rate_path=None):
    """Deterministic path of Y and x over ``horizon`` dates with Y_horizon = 0.

    ``regimes[t]`` is "elb" or "normal" for t < horizon.  When ``rate_path``
    is given, every date uses the lower-bound matrices with the intercept
    rescaled to that rate: the lower-bound regime is the model with the rate
    held exogenous, so E* / r_lower is the loading of the rate.
    """
    n = model.n
    size = (n + 1) * horizon
    m = np.zeros((size, size))
    v = np.zeros(size)
    t_idx = np.arange(horizon)
    wb = model.p_b ** t_idx * w_b0
    ws = model.p_s ** t_idx * w_s0
    rate_load = model.elb.e / model.r_lower

    def yi(t):
        return slice(t * n, (t + 1) * n)

    def xi(t):
        return n * horizon + t

    for t in range(horizon):
        if rate_path is not None:
            reg = model.elb
            const = rate_load * rate_path[t]
        else:
            reg = model.elb if regimes[t] == "elb" else model.normal
            const = reg.e if regimes[t] == "elb" else np.zeros(n)
        rows = yi(t)
        m[rows, yi(t)] = np.eye(n)
        if t + 1 < horizon:
            m[rows, yi(t + 1)] = -reg.a
        m[rows, xi(t)] = -reg.b
        v[rows] = reg.c_b * wb[t] + reg.c_s * ws[t] + const
        # backward law
        m[xi(t), xi(t)] = 1.0
        if t > 0:
            m[xi(t), xi(t - 1)] = -model.rho
        m[xi(t), yi(t)] = -model.d
    sol = np.linalg.solve(m, v)
    y = sol[: n * horizon].reshape(horizon, n)
    x = sol[n * horizon:]
    return y, x, wb, ws


def shadow_rate(model, y, x, wb, ws):
    rule = model.policy_rule
    return y @ rule.y + rule.x * x + rule.w_b * wb + rule.w_s * ws


def enumerate_windows(model, w_b0, w_s0, max_window=12, horizon=400, slack=1e-12):
    """First window length k in 0..max_window whose stacked path verifies.

    The bound is imposed in periods 0..k-1; verification requires the shadow
    rate at or below r_lower inside the window and above it afterwards.
    Returns (k, y, x) or None.
    """
    for k in range(max_window + 1):
        regimes = ["elb"] * k + ["normal"] * (horizon - k)
        y, x, wb, ws = stacked_solve(model, regimes, w_b0, w_s0, horizon)
        s = shadow_rate(model, y, x, wb, ws)
        inside = np.all(s[:k] <= model.r_lower + slack)
        outside = np.all(s[k:] > model.r_lower)
        if inside and outside:
            return k, y, x
    return None


def eggertsson_impact(p, s_xi1, s_g1):
    """Two-equation lower-bound system with h = 0 and p_b = p_s = p.

    Euler:    sigma (1 - p) c = p pi - r_lower + xi
    Phillips: (1 - beta p) pi = kappa (sigma + eta s_c) c + kappa eta s_g g
    Returns (c, pi).
    """
    ps = p.p_s
    a = np.array([
        [p.sigma * (1 - ps), -ps],
        [-p.kappa * (p.sigma + p.eta * p.s_c), 1 - p.beta * ps],
    ])
    rhs = np.array([s_xi1 - p.r_lower, p.kappa * p.eta * p.s_g * s_g1])
    c, pi = np.linalg.solve(a, rhs)
    return c, pi


def eggertsson_threshold(p, lo=1e-9, hi=1 - 1e-9):
    """Root of kappa (sigma + eta s_c) p = sigma (1 - p)(1 - beta p) by bisection."""
    k = p.kappa * (p.sigma + p.eta * p.s_c)

    def g(x):
        return k * x - p.sigma * (1 - x) * (1 - p.beta * x)

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def matrix_power_path(u, p_matrix, s_z, horizon):
    """u P^n S_z by explicit matrix powers."""
    return np.array([u @ np.linalg.matrix_power(p_matrix, n) @ s_z for n in range(horizon + 1)])
