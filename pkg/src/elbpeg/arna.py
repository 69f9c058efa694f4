"""Guess-and-verify perfect-foresight solver with the Taylor rule back on exit.

After the last lower-bound period the economy follows the unconstrained
minimum-state-variable solution

    Y_n = Theta_x x_{n-1} + Theta_b w_b,n + Theta_s w_s,n,

so any path with a finite set of binding periods is obtained by backward
induction from that terminal rule.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chain import solve_q, stable_root_count
from .errors import HorizonTooShort, Indeterminacy, NoConvergence, NoStableSolution
from .model import ModelSpec

Array = np.ndarray

TERMINAL_BUFFER = 20
MAX_WINDOW_UPDATES = 100
RATE_SLACK = 1e-12


@dataclass(frozen=True)
class MsvSolution:
    theta_x: Array
    theta_b: Array
    theta_s: Array
    q: float
    gamma_b: float
    gamma_s: float
    iterations: int


@dataclass(frozen=True)
class ArnaPath:
    y: Array          # horizon x N
    x: Array
    rate: Array | None
    shadow: Array | None
    binding: Array    # boolean per period
    ell_realized: int
    iterations: int


def msv_unconstrained(model: ModelSpec, tol: float = 1e-14, max_iter: int = 100_000) -> MsvSolution:
    """Minimum-state-variable solution of the normal regime by time iteration.

    Theta_x is iterated as Theta_x <- rho (I - G D)^{-1} G with G = A Theta_x + B
    starting from zero, and the exit persistence is q = rho + D Theta_x.

    Raises
    ------
    Indeterminacy
        More than one stable root.
    NoStableSolution
        No stable root, or the iteration fails to settle.
    """
    a, b, d, rho = model.normal.a, model.normal.b, model.d, model.rho
    n = model.n
    eye = np.eye(n)
    stable = stable_root_count(a, b, d, rho)
    if stable > 1:
        raise Indeterminacy(f"{stable} stable roots; the unconstrained solution is not unique")
    if stable == 0:
        raise NoStableSolution("no stable root")

    theta = np.zeros(n)
    it = 0
    for it in range(1, max_iter + 1):
        g = a @ theta + b
        new = rho * np.linalg.solve(eye - np.outer(g, d), g)
        step = np.max(np.abs(new - theta), initial=0.0)
        theta = new
        if step < tol:
            break
    else:
        raise NoStableSolution("time iteration on Theta_x did not converge")
    q = rho + float(d @ theta)

    td = np.outer(a @ theta, d)
    bd = np.outer(b, d)
    theta_b = np.linalg.solve(eye - td - model.p_b * a - bd, model.normal.c_b)
    theta_s = np.linalg.solve(eye - td - model.p_s * a - bd, model.normal.c_s)
    return MsvSolution(theta, theta_b, theta_s, q, float(d @ theta_b), float(d @ theta_s), it)


def _default_horizon(ell: int) -> int:
    return max(4 * ell, 0) + TERMINAL_BUFFER + 40


def solve_path(model: ModelSpec, binding, w_b0: float, w_s0: float, msv: MsvSolution | None = None) -> ArnaPath:
    """Perfect-foresight path given the set of lower-bound periods.

    ``binding`` is a boolean sequence over the horizon; the terminal rule
    takes over after its last entry.
    """
    binding = np.asarray(binding, dtype=bool)
    horizon = binding.size
    if msv is None:
        msv = msv_unconstrained(model)
    n = model.n
    eye = np.eye(n)
    d, rho = model.d, model.rho
    nn = np.arange(horizon + 1)
    wb = model.p_b ** nn * w_b0
    ws = model.p_s ** nn * w_s0

    # Y_n = F_n x_{n-1} + f_n, built backwards from the terminal rule
    big_f = np.zeros((horizon + 1, n))
    small_f = np.zeros((horizon + 1, n))
    big_f[horizon] = msv.theta_x
    small_f[horizon] = msv.theta_b * wb[horizon] + msv.theta_s * ws[horizon]
    for t in range(horizon - 1, -1, -1):
        reg = model.elb if binding[t] else model.normal
        g = reg.a @ big_f[t + 1] + reg.b
        const = reg.a @ small_f[t + 1] + reg.c_b * wb[t] + reg.c_s * ws[t]
        if binding[t]:
            const = const + reg.e
        lhs = eye - np.outer(g, d)
        big_f[t] = rho * np.linalg.solve(lhs, g)
        small_f[t] = np.linalg.solve(lhs, const)

    y = np.zeros((horizon, n))
    x = np.zeros(horizon)
    x_prev = 0.0
    for t in range(horizon):
        y[t] = big_f[t] * x_prev + small_f[t]
        x[t] = rho * x_prev + d @ y[t]
        x_prev = x[t]

    shadow = model.rate(y, x, wb[:horizon], ws[:horizon])
    rate = None
    if shadow is not None:
        shadow = np.asarray(shadow, dtype=float)
        rate = np.where(binding, model.r_lower, shadow)
    ell = int(np.flatnonzero(binding).max() + 1) if binding.any() else 0
    return ArnaPath(y, x, rate, shadow, binding, ell, 0)


def solve_fixed_window(model: ModelSpec, ell: int, w_b0: float, w_s0: float, horizon: int | None = None) -> ArnaPath:
    """Path with the bound imposed in periods 0..ell-1 and never afterwards."""
    horizon = max(ell, 1) if horizon is None else horizon
    binding = np.zeros(horizon, dtype=bool)
    binding[:ell] = True
    return solve_path(model, binding, w_b0, w_s0)


def solve_occbin(model: ModelSpec, w_b0: float, w_s0: float, horizon: int | None = None) -> ArnaPath:
    """Iterate on the binding set until the rate path verifies.

    The next guess is the set of periods whose shadow rate lies at or below
    the bound under the current guess.

    Raises
    ------
    NoConvergence
        After ``MAX_WINDOW_UPDATES`` guesses without a fixed point.
    HorizonTooShort
        When the bound binds inside the terminal buffer.
    """
    if model.rate(np.zeros(model.n), 0.0, 0.0, 0.0) is None:
        raise ValueError("model has no policy rule; the bound cannot be checked")
    horizon = 200 if horizon is None else horizon
    if horizon <= TERMINAL_BUFFER:
        raise HorizonTooShort(f"horizon {horizon} does not exceed the terminal buffer")
    msv = msv_unconstrained(model)
    binding = np.zeros(horizon, dtype=bool)
    for it in range(1, MAX_WINDOW_UPDATES + 1):
        path = solve_path(model, binding, w_b0, w_s0, msv)
        new = path.shadow <= model.r_lower + RATE_SLACK
        if np.array_equal(new, binding):
            if binding[-TERMINAL_BUFFER:].any():
                raise HorizonTooShort("the bound still binds inside the terminal buffer")
            return ArnaPath(path.y, path.x, path.rate, path.shadow, binding, path.ell_realized, it)
        binding = new
    raise NoConvergence(f"binding set did not settle after {MAX_WINDOW_UPDATES} updates")


def arna_multiplier(model: ModelSpec, ell: int, eps: float = 1e-6, w_b0: float = 0.0) -> Array:
    """Impact multiplier of the scenario shock under the AR-NA timing."""
    from .multiplier import finite_difference_multiplier

    return finite_difference_multiplier(model, ell, eps, flavor="arna", w_b0=w_b0)


def check_q(model: ModelSpec, msv: MsvSolution | None = None) -> float:
    """|q_msv - q_chain|: both routes to the exit persistence."""
    msv = msv_unconstrained(model) if msv is None else msv
    return abs(msv.q - solve_q(model.normal.a, model.normal.b, model.d, model.rho))


def write_path_csv(path_obj: ArnaPath, model: ModelSpec, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "variable", "value", "regime"])
        for t in range(path_obj.y.shape[0]):
            regime = "elb" if path_obj.binding[t] else "normal"
            for name, v in zip(model.variable_names, path_obj.y[t]):
                w.writerow([t, name, repr(float(v)), regime])
            w.writerow([t, model.x_name, repr(float(path_obj.x[t])), regime])
            if path_obj.rate is not None:
                w.writerow([t, "r", repr(float(path_obj.rate[t])), regime])
