"""Markov-chain representation of the exit dynamics and the endogenous peg.

Expected paths are written E_t Z_{t+n} = u P^n S_z.  A spell of length ell uses
ell - 1 deterministic lower-bound states, one absorbing-at-rate-p_s lower-bound
state, two post-exit states (decaying at p_b and q) and the zero steady state.
All states of all variables are solved jointly from one dense linear system.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ComplexExitDynamics,
    DurationChanged,
    ElbVerificationFailed,
    NoAdmissibleRoot,
    SingularSystem,
)
from .model import ModelSpec

Array = np.ndarray

HOMOTOPY_STEPS = 100
IMAG_TOL = 1e-9
COND_WARN = 1e10
RATE_SLACK = 1e-12

PEG_MODES = ("peg", "taylor", "elb_forever")


# ---------------------------------------------------------------- persistence q

def _poly_coefficients(a, b, d) -> tuple[np.ndarray, np.ndarray]:
    """Ascending coefficients of q det(I - qA - BD) and det(I - qA).

    Both have degree at most N + 1, so sampling on N + 2 roots of unity and
    transforming back recovers them exactly.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    bd = np.outer(np.ravel(b), np.ravel(d))
    eye = np.eye(n)
    k = n + 2
    z = np.exp(2j * np.pi * np.arange(k) / k)
    v1 = np.array([zz * np.linalg.det(eye - zz * a - bd) for zz in z])
    v2 = np.array([np.linalg.det(eye - zz * a) for zz in z])
    return (np.fft.fft(v1) / k).real, (np.fft.fft(v2) / k).real


def _trim(coef: np.ndarray) -> np.ndarray:
    coef = coef.copy()
    scale = np.max(np.abs(coef), initial=0.0)
    coef[np.abs(coef) < 1e-14 * max(scale, 1.0)] = 0.0
    return np.trim_zeros(coef[::-1], "f")


def q_polynomial(a, b, d, rho: float) -> np.ndarray:
    """Coefficients (highest power first) of q det(I - qA - BD) - rho det(I - qA).

    Its roots are the fixed points of q = rho + q D (I - qA)^{-1} B after
    clearing the denominator.
    """
    c1, c2 = _poly_coefficients(a, b, d)
    return _trim(c1 - rho * c2)


def q_residual(q: float, a, b, d, rho: float) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    m = np.linalg.solve(np.eye(a.shape[0]) - q * a, np.ravel(b))
    return float(q - rho - q * np.ravel(d) @ m)


def _roots(a, b, d, rho, coefs=None):
    c1, c2 = _poly_coefficients(a, b, d) if coefs is None else coefs
    coef = _trim(c1 - rho * c2)
    if coef.size <= 1:
        return np.array([], dtype=complex)
    return np.roots(coef)


def _track(coefs, rho_k: float, q_prev: complex) -> complex:
    # Newton from the previous root; full root set when Newton stalls
    c = _trim(coefs[0] - rho_k * coefs[1])
    if c.size <= 1:
        raise NoAdmissibleRoot("polynomial for q is degenerate")
    cl = [complex(v) for v in c]
    q = complex(q_prev)
    for _ in range(20):
        f, df = cl[0], 0j
        for v in cl[1:]:
            df = df * q + f
            f = f * q + v
        if df == 0:
            break
        step = f / df
        q -= step
        if abs(step) < 1e-14 * max(1.0, abs(q)):
            return q
    roots = np.roots(c)
    return roots[np.argmin(np.abs(roots - q_prev))]


def _polish(q: float, a, b, d, rho: float) -> float:
    # a couple of Newton steps on the scalar fixed-point residual
    for _ in range(3):
        f = q_residual(q, a, b, d, rho)
        h = 1e-7 * max(1.0, abs(q))
        df = (q_residual(q + h, a, b, d, rho) - q_residual(q - h, a, b, d, rho)) / (2 * h)
        if df == 0 or not np.isfinite(df):
            break
        step = f / df
        if abs(step) > 1e-6:
            break
        q -= step
    return q


def solve_q(a, b, d, rho: float) -> float:
    """Exit persistence q solving q = rho + q D (I - qA)^{-1} B.

    The root is selected by continuation from rho = 0, where q = 0 exactly,
    tracking the nearest root over ``HOMOTOPY_STEPS`` equal increments.

    Raises
    ------
    ComplexExitDynamics
        If the tracked root is complex.
    NoAdmissibleRoot
        If it is real but outside [0, 1) or makes I - qA singular.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if rho == 0.0:
        return 0.0
    q = 0.0 + 0.0j
    coefs = _poly_coefficients(a, b, d)
    for k in range(1, HOMOTOPY_STEPS + 1):
        q = _track(coefs, rho * k / HOMOTOPY_STEPS, q)
    # snap onto the exact root set at the target value
    roots = _roots(a, b, d, rho, coefs)
    if roots.size == 0:
        raise NoAdmissibleRoot("polynomial for q is degenerate")
    q = roots[np.argmin(np.abs(roots - q))]
    if abs(q.imag) > IMAG_TOL:
        raise ComplexExitDynamics(f"selected root q={q:.6g} is complex")
    q = float(q.real)
    if not (0.0 <= q < 1.0):
        raise NoAdmissibleRoot(f"selected root q={q:.6g} is outside [0,1)")
    if np.linalg.cond(np.eye(a.shape[0]) - q * a) > 1e12:
        raise NoAdmissibleRoot("I - qA is singular at the selected root")
    return _polish(q, a, b, d, rho)


def admissible_roots(a, b, d, rho: float) -> list[float]:
    """All real roots in [0, 1) with I - qA nonsingular."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    out = []
    for r in _roots(a, b, d, rho):
        if abs(r.imag) <= IMAG_TOL and 0.0 <= r.real < 1.0:
            if np.linalg.cond(np.eye(a.shape[0]) - r.real * a) < 1e12:
                out.append(float(r.real))
    return sorted(out)


def stable_root_count(a, b, d, rho: float) -> int:
    """Number of roots inside the unit circle; one means a unique bounded solution."""
    return int(np.sum(np.abs(_roots(a, b, d, rho)) < 1.0))


# ---------------------------------------------------------------- transition

@dataclass(frozen=True)
class ChainSpec:
    u: Array
    p_matrix: Array
    q: float
    n_det: int

    @property
    def size(self) -> int:
        return self.p_matrix.shape[0]


def _transition(p_s: float, p_b: float, q: float, n_det: int) -> ChainSpec:
    size = n_det + 4
    p = np.zeros((size, size))
    for i in range(n_det):
        p[i, i + 1] = 1.0
    a = n_det
    p[a, a], p[a, a + 1] = p_s, 1.0 - p_s
    p[a + 1, a + 1], p[a + 1, a + 2] = p_b, 1.0 - p_b
    p[a + 2, a + 2], p[a + 2, a + 3] = q, 1.0 - q
    p[a + 3, a + 3] = 1.0
    u = np.zeros(size)
    u[0] = 1.0
    return ChainSpec(u, p, q, n_det)


def build_transition(p_s: float, p_b: float, q: float, ell: int) -> ChainSpec:
    """(ell+3)-state chain: ell-1 unit shifts followed by the four-state core."""
    if ell < 1:
        raise ValueError("ell must be at least 1")
    for name, v in (("p_s", p_s), ("p_b", p_b)):
        if not 0.0 < v < 1.0:
            raise ValueError(f"{name} must lie in (0,1)")
    if not 0.0 <= q < 1.0:
        raise ValueError("q must lie in [0,1)")
    return _transition(p_s, p_b, q, ell - 1)


def expected_path(spec: ChainSpec, s_z, n: int):
    """u P^n S_z."""
    dist = spec.u @ np.linalg.matrix_power(spec.p_matrix, n)
    return dist @ np.asarray(s_z)


def expected_paths(spec: ChainSpec, s_z, horizon: int) -> np.ndarray:
    """u P^n S_z for n = 0..horizon, stacked along the first axis."""
    s_z = np.asarray(s_z)
    dist = spec.u.copy()
    out = []
    for _ in range(horizon + 1):
        out.append(dist @ s_z)
        dist = dist @ spec.p_matrix
    return np.array(out)


def simulate_chain(spec: ChainSpec, s_z, runs: int, horizon: int, seed: int = 0, start: int | None = None):
    """Monte-Carlo average of chain realizations.

    ``s_z`` is one state vector or a ``(size, k)`` matrix of them; all
    columns are read off the same simulated paths.  Returns
    ``(mean, stderr)`` with leading dimension ``horizon + 1``.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    s_z = np.asarray(s_z, dtype=float)
    rng = np.random.default_rng(seed)
    cum = np.cumsum(spec.p_matrix, axis=1)
    cum[:, -1] = 1.0
    state = np.full(runs, int(np.argmax(spec.u)) if start is None else start)
    mean = np.empty((horizon + 1,) + s_z.shape[1:])
    se = np.zeros_like(mean)
    for n in range(horizon + 1):
        counts = np.bincount(state, minlength=spec.size)
        mean[n] = counts @ s_z / runs
        if runs > 1:
            occupied = s_z[counts > 0]
            dev = s_z - mean[n]
            var = counts @ (dev * dev) / (runs - 1)
            # a degenerate period has se exactly zero, not round-off
            se[n] = np.where(np.ptp(occupied, axis=0) > 0, np.sqrt(var / runs), 0.0)
        draws = rng.random(runs)
        state = _step(cum, state, draws)
    return mean, se


def exact_stderr(spec: ChainSpec, s_z, runs: int, horizon: int) -> Array:
    """Standard error of the Monte-Carlo mean implied by the chain itself.

    Unlike the sample value it stays positive when no run has visited a
    state that carries little probability.
    """
    s_z = np.asarray(s_z, dtype=float)
    m = expected_paths(spec, s_z, horizon)
    second = expected_paths(spec, s_z * s_z, horizon)
    return np.sqrt(np.maximum(second - m * m, 0.0) / runs)


def _step(cum, state, draws):
    rows = cum[state]
    return np.minimum((draws[:, None] >= rows).sum(axis=1), cum.shape[1] - 1)


# ---------------------------------------------------------------- joint solve

@dataclass(frozen=True)
class ChainSolution:
    """Markov states of every variable.

    ``states`` maps variable names (forward variables, the backward variable,
    ``w_b``, ``w_s`` and, when a rate rule is known, ``r``) to vectors of
    length ``spec.size`` whose last entry is the absorbing zero.
    ``regimes`` marks each non-absorbing state as ``"elb"`` or ``"normal"``.
    """

    spec: ChainSpec
    states: dict
    ell: int
    shock_states: dict
    gamma: float
    regimes: tuple
    mode: str = "peg"
    shadow_rate: Array | None = None
    intercept_scale: float = 1.0
    w0: tuple = (0.0, 0.0)
    forward_names: tuple = field(default=())

    def y_states(self) -> Array:
        return np.column_stack([self.states[k] for k in self.forward_names])

    @property
    def x_states(self) -> Array:
        return self.states[self._x_name]

    @property
    def _x_name(self) -> str:
        return [k for k in self.states if k not in self.forward_names and k not in ("w_b", "w_s", "r")][0]

    def impact(self) -> dict:
        return {k: float(v[0]) for k, v in self.states.items()}


def gamma(p_b: float, p_s: float) -> float:
    return (p_b - p_s) / (1.0 - p_s)


def _shock_states(spec: ChainSpec, p_b, p_s, w_b0, w_s0):
    size, a = spec.size, spec.n_det
    wb = np.zeros(size)
    ws = np.zeros(size)
    for i in range(a + 1):
        wb[i] = p_b ** i * w_b0
        ws[i] = p_s ** i * w_s0
    # post-exit baseline state keeps E w_b decaying at p_b
    wb[a + 1] = gamma(p_b, p_s) * wb[a]
    return wb, ws


def _regime_layout(mode: str, ell: int):
    """(n_det, regimes of the core states a, b, c)."""
    if mode == "peg":
        return ell - 1, ("elb", "normal", "normal")
    if mode == "taylor":
        return ell, ("normal", "normal", "normal")
    if mode == "elb_forever":
        return 0, ("elb", "elb", "elb")
    raise ValueError(f"unknown peg mode {mode!r}; expected one of {PEG_MODES}")


def _solve_joint(model: ModelSpec, spec: ChainSpec, regimes, wb, ws, intercept_scale):
    n = model.n
    k = spec.size - 1  # non-absorbing states
    p = spec.p_matrix
    a_core = spec.n_det
    dim = k * (n + 1)
    mat = np.zeros((dim, dim))
    rhs = np.zeros(dim)

    def yi(s):
        return slice(s * n, (s + 1) * n)

    def xi(s):
        return k * n + s

    eye = np.eye(n)
    for s in range(k):
        reg = model.elb if regimes[s] == "elb" else model.normal
        rows = yi(s)
        mat[rows, yi(s)] += eye
        for t in range(k):
            if p[s, t] != 0.0:
                mat[rows, yi(t)] -= p[s, t] * reg.a
        mat[rows, xi(s)] -= reg.b
        rhs[rows] = reg.c_b * wb[s] + reg.c_s * ws[s]
        if regimes[s] == "elb":
            rhs[rows] += intercept_scale * reg.e

    d, rho = model.d, model.rho
    row = k * n
    # impact and deterministic prefix: x_i = rho x_{i-1} + D Y_i, x_{-1} = 0
    for s in range(a_core + 1):
        mat[row, xi(s)] = 1.0
        mat[row, yi(s)] = -d
        if s > 0:
            mat[row, xi(s - 1)] = -rho
        row += 1
    # expected-path conditions from the core onwards, states a and b
    for s in (a_core, a_core + 1):
        for t in range(k):
            if p[s, t] != 0.0:
                mat[row, xi(t)] += p[s, t]
                mat[row, yi(t)] -= p[s, t] * d
        mat[row, xi(s)] -= rho
        row += 1
    # the q state closes on its own when q solves its fixed-point equation

    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularSystem(f"state restrictions are singular (condition {cond:.3g})")
    if cond > COND_WARN:
        warnings.warn(f"state restriction system is ill-conditioned (condition {cond:.3g})")
    sol = np.linalg.solve(mat, rhs)
    y = np.zeros((spec.size, n))
    y[:k] = sol[: k * n].reshape(k, n)
    x = np.zeros(spec.size)
    x[:k] = sol[k * n:]
    return y, x


def assemble_states(
    model: ModelSpec,
    ell: int,
    w_b0: float,
    w_s0: float,
    peg: str = "peg",
    q: float | None = None,
    verify: bool = True,
    rate_zero: bool = False,
) -> ChainSolution:
    """Solve all Markov states for a lower-bound spell of ``ell`` periods.

    Parameters
    ----------
    model : ModelSpec
    ell : int
        Spell length; ignored for ``peg="elb_forever"``.
    w_b0, w_s0 : float
        Impact values of the baseline and scenario shocks.
    peg : {"peg", "taylor", "elb_forever"}
        Post-exit closure.  ``"peg"`` is the endogenous peg (post-exit states
        obey the normal-regime equations).  ``"taylor"`` replicates the
        AR-NA timing: ``ell`` deterministic lower-bound periods followed by a
        Taylor-rule core.  ``"elb_forever"`` keeps every state at the bound
        and expects ``q`` to be the lower-bound persistence q*.
    q : float, optional
        Exit persistence; solved from the normal regime when omitted.
    verify : bool
        Run the guess-and-verify check on the rate states.
    rate_zero : bool
        In ``"elb_forever"`` mode, set the rate states to zero rather than r̲.

    Raises
    ------
    SingularSystem, ElbVerificationFailed
    """
    if peg != "elb_forever" and ell < 1:
        raise ValueError("ell must be at least 1")
    if q is None:
        if peg == "elb_forever":
            q = solve_q(model.elb.a, model.elb.b, model.d, model.rho)
        else:
            q = solve_q(model.normal.a, model.normal.b, model.d, model.rho)
    n_det, core = _regime_layout(peg, ell)
    spec = _transition(model.p_s, model.p_b, q, n_det)
    regimes = ("elb",) * n_det + core
    wb, ws = _shock_states(spec, model.p_b, model.p_s, w_b0, w_s0)
    scale = 0.0 if (peg == "elb_forever" and rate_zero) else 1.0
    y, x = _solve_joint(model, spec, regimes, wb, ws, scale)

    states = {name: y[:, i] for i, name in enumerate(model.variable_names)}
    states[model.x_name] = x
    states["w_b"] = wb
    states["w_s"] = ws
    shadow = model.rate(y, x, wb, ws)
    if shadow is not None:
        shadow = np.asarray(shadow, dtype=float)
        shadow[-1] = 0.0
        r = np.zeros(spec.size)
        for s, reg in enumerate(regimes):
            r[s] = model.r_lower * scale if reg == "elb" else shadow[s]
        states["r"] = r

    sol = ChainSolution(
        spec=spec, states=states, ell=ell if peg != "elb_forever" else 0,
        shock_states={"w_b": wb, "w_s": ws}, gamma=gamma(model.p_b, model.p_s),
        regimes=regimes, mode=peg, shadow_rate=shadow, intercept_scale=scale,
        w0=(w_b0, w_s0), forward_names=tuple(model.variable_names),
    )
    if verify and peg != "elb_forever" and shadow is not None:
        verify_elb(sol, model)
    return sol


def verify_elb(sol: ChainSolution, model: ModelSpec) -> None:
    """Shadow rate at or below r̲ in bound states, rate above r̲ after exit."""
    r = sol.states["r"]
    for s, reg in enumerate(sol.regimes):
        if reg == "elb":
            if sol.shadow_rate[s] > model.r_lower + RATE_SLACK:
                raise ElbVerificationFailed(s + 1, float(sol.shadow_rate[s]), "shadow rate above the bound")
        elif r[s] <= model.r_lower:
            raise ElbVerificationFailed(s + 1, float(r[s]), "post-exit rate at or below the bound")


def find_duration(
    model: ModelSpec,
    w_b0: float,
    w_s0: float = 0.0,
    ell_max: int = 40,
    peg: str = "peg",
    check_scenario: bool = True,
) -> ChainSolution:
    """Smallest ell in 1..ell_max whose solution passes verification.

    When ``check_scenario`` is set and ``w_s0`` is nonzero, the duration is
    recomputed without the scenario shock and must agree.
    """
    if model.rate(np.zeros(model.n), 0.0, 0.0, 0.0) is None:
        raise ValueError("model has no policy rule; duration cannot be verified")
    q = solve_q(model.normal.a, model.normal.b, model.d, model.rho)
    last = None
    for ell in range(1, ell_max + 1):
        try:
            sol = assemble_states(model, ell, w_b0, w_s0, peg=peg, q=q, verify=True)
        except ElbVerificationFailed as exc:
            last = exc
            continue
        if check_scenario and w_s0 != 0.0:
            base = find_duration(model, w_b0, 0.0, ell_max, peg, check_scenario=False)
            if base.ell != ell:
                raise DurationChanged(f"scenario shock moves the spell from {base.ell} to {ell} periods")
        return sol
    rate = last.shadow_rate if last is not None else float("nan")
    raise ElbVerificationFailed(ell_max, rate, f"no spell length up to {ell_max} verifies")


# ---------------------------------------------------------------- diagnostics

def peg_path(solution: ChainSolution, n: int) -> float:
    """f(n) = u P^n S_r."""
    return float(expected_path(solution.spec, solution.states["r"], n))


def equilibrium_residuals(solution: ChainSolution, model: ModelSpec, horizon: int = 40) -> dict:
    """Max absolute residual of each equation block along the expected path.

    The forward block at date n averages the regime-specific equations over
    the date-n state distribution; the backward and shock blocks are checked
    directly on the expected paths.
    """
    spec = solution.spec
    y = solution.y_states()
    x = solution.x_states
    wb, ws = solution.states["w_b"], solution.states["w_s"]
    k = spec.size - 1
    n_vars = model.n
    # state-wise forward residuals, then averaged by u P^n
    per_state = np.zeros((spec.size, n_vars))
    py = spec.p_matrix @ y
    for s in range(k):
        reg = model.elb if solution.regimes[s] == "elb" else model.normal
        per_state[s] = y[s] - reg.a @ py[s] - reg.b * x[s] - reg.c_b * wb[s] - reg.c_s * ws[s]
        if solution.regimes[s] == "elb":
            per_state[s] -= solution.intercept_scale * reg.e
    fwd = expected_paths(spec, per_state, horizon)

    ey = expected_paths(spec, y, horizon)
    ex = expected_paths(spec, x, horizon)
    back = np.empty(horizon + 1)
    back[0] = ex[0] - model.d @ ey[0]
    back[1:] = ex[1:] - model.rho * ex[:-1] - ey[1:] @ model.d

    nn = np.arange(horizon + 1)
    w_b0, w_s0 = solution.w0
    eb = expected_paths(spec, wb, horizon) - model.p_b ** nn * w_b0
    es = expected_paths(spec, ws, horizon) - model.p_s ** nn * w_s0

    out = {
        "forward": float(np.max(np.abs(fwd))),
        "backward": float(np.max(np.abs(back))),
        "w_b": float(np.max(np.abs(eb))),
        "w_s": float(np.max(np.abs(es))),
    }
    if "r" in solution.states and solution.shadow_rate is not None:
        r = solution.states["r"]
        post = [s for s, reg in enumerate(solution.regimes) if reg == "normal"]
        out["rate_rule"] = float(max((abs(r[s] - solution.shadow_rate[s]) for s in post), default=0.0))
    return out


def write_states_csv(solution: ChainSolution, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "state_index", "value"])
        for name, vec in solution.states.items():
            for i, v in enumerate(vec, start=1):
                w.writerow([name, i, repr(float(v))])


def write_paths_csv(solution: ChainSolution, horizon: int, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "n", "value"])
        for name, vec in solution.states.items():
            for n, v in enumerate(expected_paths(solution.spec, vec, horizon)):
                w.writerow([name, n, repr(float(v))])
