"""Impact multipliers of the scenario shock as a function of the spell length.

The sequence obeys

    M(ell) = (A*)^{-1} X_{ell-1} [C_s* + p_s A* M(ell-1)],
    X_ell  = F(X_{ell-1}) = A*(I - B*D + rho A* - rho X_{ell-1})^{-1},

and only the initial pair (M(1), X_1) differs between the endogenous peg and
the AR-NA (Taylor rule on exit) timing.  In the saddle case the peg sequence
sits on the stable manifold of an unstable recursion, so round-off grows like
rho(p_s X)^ell; long peg sequences are therefore run in extended precision.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import mpmath
import numpy as np

from .chain import assemble_states, find_duration, solve_q
from .errors import (
    BoundaryCase,
    ComplexMinimalSolution,
    DurationChanged,
    RhoZeroWithHabits,
    SingularIterate,
    SingularOmega,
    SolverError,
)
from .model import ModelSpec
from .qme import SolventPair, model_solvents, spectral_radius

Array = np.ndarray

BOUNDARY_BAND = 1e-6
DIVERGENCE_NORM = 1e6
DIVERGENCE_RUN = 20
FLAVORS = ("peg", "arna")


# ---------------------------------------------------------------- backends
# Formulas are written once against this small interface so that the same
# code runs in float64 and in mpmath arbitrary precision.

class _Float:
    def mat(self, a):
        return np.array(a, dtype=float, copy=True)

    def col(self, v):
        return np.asarray(v, dtype=float).reshape(-1, 1)

    def row(self, v):
        return np.asarray(v, dtype=float).reshape(1, -1)

    def eye(self, n):
        return np.eye(n)

    def inv(self, a):
        if np.linalg.cond(a) > 1e14:
            raise np.linalg.LinAlgError("singular")
        return np.linalg.inv(a)

    def scalar(self, x):
        return float(x)

    def to_numpy(self, a):
        return np.asarray(a, dtype=float)


class _Mp:
    _contexts: dict = {}

    def __init__(self, dps: int):
        # one context per precision so matrices from separate calls interoperate
        if dps not in self._contexts:
            ctx = mpmath.mp.clone()
            ctx.dps = dps
            self._contexts[dps] = ctx
        self.ctx = self._contexts[dps]
        self.dps = dps

    def mat(self, a):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return self.ctx.matrix([[self.ctx.mpf(float(v)) for v in r] for r in a])

    def col(self, v):
        return self.ctx.matrix([self.ctx.mpf(float(x)) for x in np.ravel(v)])

    def row(self, v):
        return self.col(v).T

    def eye(self, n):
        return self.ctx.eye(n)

    def inv(self, a):
        try:
            return self.ctx.inverse(a)
        except ZeroDivisionError as exc:
            raise np.linalg.LinAlgError("singular") from exc

    def scalar(self, x):
        return self.ctx.mpf(x)

    def to_numpy(self, a):
        return np.array(a.tolist(), dtype=float)


def _mm(a, b):
    return a @ b if isinstance(a, np.ndarray) else a * b


def _mp_q(ctx, a, b, d, rho, q0):
    # refine the float root of q = rho + q D (I - qA)^{-1} B to working precision
    n = a.rows

    def f(q):
        return q - rho - q * (d * ctx.lu_solve(ctx.eye(n) - q * a, b))[0]

    return ctx.findroot(f, ctx.mpf(q0))


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class InitialConditions:
    """M(1) and X_1 for one flavor.

    ``exact`` optionally carries the same pair in mpmath at ``dps`` digits.
    """

    m1: Array
    x1: Array
    flavor: str
    exact: tuple | None = None
    dps: int | None = None


@dataclass(frozen=True)
class MultiplierSequence:
    values: list
    x_path: list
    flavor: str
    dps: int | None = None

    def as_array(self) -> Array:
        return np.array(self.values)

    def norms(self) -> Array:
        return np.array([np.max(np.abs(v)) for v in self.values])


@dataclass(frozen=True)
class StabilityReport:
    x_underbar: Array
    rho_psx: float
    classification: str
    p_threshold: float
    limit: Array
    arna_limit: Array | None
    solvents: SolventPair

    @property
    def arna_divergent(self) -> bool:
        return self.classification == "saddle"


# ---------------------------------------------------------------- initial conditions

def _initial(model: ModelSpec, q, flavor: str, be, method: str):
    n = model.n
    a_s, b_s = be.mat(model.elb.a), be.col(model.elb.b)
    cs_s = be.col(model.elb.c_s)
    a, b, cs = be.mat(model.normal.a), be.col(model.normal.b), be.col(model.normal.c_s)
    d = be.row(model.d)
    rho, ps = be.scalar(model.rho), be.scalar(model.p_s)
    eye = be.eye(n)
    bd_s = _mm(b_s, d)

    def f_of(x):
        return _mm(a_s, be.inv(eye - bd_s + rho * (a_s - x)))

    if method == "auto":
        method = "nesting" if model.rho == 0.0 else "omega"
    if method == "omega" and model.rho == 0.0:
        raise RhoZeroWithHabits("closed-form initial conditions divide by rho; use the nesting branch")

    if method == "nesting":
        # rho = 0: q = 0, Theta_x = 0 and the exit block is static
        if flavor == "peg":
            m1 = _mm(be.inv(eye - ps * a_s - bd_s), cs_s)
            x1 = _mm(a_s, be.inv(eye - bd_s))
        else:
            theta_s = _mm(be.inv(eye - ps * a - _mm(b, d)), cs)
            m1 = _mm(be.inv(eye - bd_s), cs_s + ps * _mm(a_s, theta_s))
            x1 = f_of(_mm(a_s, be.inv(eye - bd_s)))
        return m1, x1

    m_q = _mm(be.inv(eye - q * a), b)  # (I - qA)^{-1} B
    if flavor == "peg":
        om_y = -(eye - ps * a_s) + (ps * q / rho) * _mm(_mm(a_s, m_q), d)
        om_x = b_s - ((ps - rho) * q / rho) * _mm(a_s, m_q)
        om_f = be.inv(-om_y - _mm(om_x, d))
        m1 = _mm(om_f, cs_s)
        x1 = _mm(a_s, be.inv(eye - bd_s - rho * _mm(_mm(_mm(a_s, om_f), om_x), d)))
    else:
        om_y = -(eye - ps * a) + (ps * q / rho) * _mm(_mm(a, m_q), d)
        om_x = ((rho - ps) * q / rho) * _mm(a, m_q) + b
        om_phi = be.inv(-om_y - _mm(om_x, d))
        big_f = eye - bd_s - rho * _mm(_mm(_mm(a_s, om_phi), om_x), d)
        f_inv = be.inv(big_f)
        m1 = _mm(f_inv, cs_s + ps * _mm(_mm(a_s, om_phi), cs))
        x1 = f_of(_mm(a_s, f_inv))
    return m1, x1


def initial_conditions(
    model: ModelSpec,
    q: float | None = None,
    flavor: str = "peg",
    method: str = "auto",
    dps: int | None = None,
) -> InitialConditions:
    """M(1) and X_1 under the peg or the AR-NA timing.

    Parameters
    ----------
    model : ModelSpec
    q : float, optional
        Exit persistence; solved from the normal regime when omitted.
    flavor : {"peg", "arna"}
    method : {"auto", "omega", "nesting"}
        ``"omega"`` uses the closed forms that divide by rho; ``"nesting"`` is
        the rho = 0 branch.  ``"auto"`` picks by the value of rho.
    dps : int, optional
        Also compute the pair in mpmath at this many digits.

    Raises
    ------
    SingularOmega, RhoZeroWithHabits
    """
    if flavor not in FLAVORS:
        raise ValueError(f"flavor must be one of {FLAVORS}")
    if q is None:
        q = solve_q(model.normal.a, model.normal.b, model.d, model.rho)
    try:
        m1, x1 = _initial(model, q, flavor, _Float(), method)
    except np.linalg.LinAlgError as exc:
        raise SingularOmega(f"{flavor} initial conditions are singular") from exc
    exact = None
    if dps is not None:
        be = _Mp(dps)
        q_mp = q
        if model.rho != 0.0:
            q_mp = _mp_q(be.ctx, be.mat(model.normal.a), be.col(model.normal.b), be.row(model.d),
                         be.scalar(model.rho), q)
        try:
            exact = _initial(model, q_mp, flavor, be, method)
        except np.linalg.LinAlgError as exc:
            raise SingularOmega(f"{flavor} initial conditions are singular") from exc
    return InitialConditions(m1.reshape(-1), x1, flavor, exact, dps)


# ---------------------------------------------------------------- recursion

def recurse(init: InitialConditions, model: ModelSpec, length: int, dps: int | None = None) -> MultiplierSequence:
    """Apply the multiplier recursion for ell = 2..length.

    With ``dps`` set the recursion runs in mpmath; exact initial conditions
    are used when ``init`` carries them at the same precision.
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    be = _Float() if dps is None else _Mp(dps)
    if dps is not None and init.exact is not None and init.dps == dps:
        m, x = init.exact
    else:
        m, x = be.col(init.m1), be.mat(init.x1)
    n = model.n
    a_s, b_s, cs_s = be.mat(model.elb.a), be.col(model.elb.b), be.col(model.elb.c_s)
    d = be.row(model.d)
    rho, ps = be.scalar(model.rho), be.scalar(model.p_s)
    eye = be.eye(n)
    base = eye - _mm(b_s, d) + rho * a_s
    a_inv = be.inv(a_s)

    values = [be.to_numpy(m).reshape(-1)]
    x_path = []
    for ell in range(2, length + 1):
        x_path.append(be.to_numpy(x))
        m = _mm(_mm(a_inv, x), cs_s + ps * _mm(a_s, m))
        values.append(be.to_numpy(m).reshape(-1))
        if ell < length:
            try:
                x = _mm(a_s, be.inv(base - rho * x))
            except np.linalg.LinAlgError as exc:
                raise SingularIterate("I - B*D + rho A* - rho X is numerically singular", ell) from exc
    return MultiplierSequence(values, x_path, init.flavor, dps)


def required_dps(rho_psx: float, length: int) -> int | None:
    """Working precision that keeps round-off amplification below 1e-16, or None for float64."""
    growth = length * math.log10(max(rho_psx, 1.0))
    if growth < 4.0:
        return None
    return int(math.ceil(growth)) + 40


def multiplier_sequence(model: ModelSpec, length: int, flavor: str = "peg", dps="auto") -> MultiplierSequence:
    """Initial conditions plus recursion, switching to mpmath when needed."""
    if dps == "auto":
        if model.rho == 0.0:
            dps = None
        else:
            sp = model_solvents(model.elb.a, model.elb.b, model.d, model.rho)
            dps = required_dps(model.p_s * spectral_radius(sp.x_underbar), length)
    init = initial_conditions(model, flavor=flavor, dps=dps)
    return recurse(init, model, length, dps=dps)


# ---------------------------------------------------------------- limits

def limit_multiplier(model: ModelSpec, raise_on_boundary: bool = False) -> StabilityReport:
    """Limit of the multiplier sequence and its sink/saddle classification.

    The limit is M = (I - p_s X~ A*)^{-1} X~ C_s* with X~ = (A*)^{-1} X and X
    the limit of the X_ell iteration.  It is reached by the peg sequence in
    both cases and by the AR-NA sequence only when rho(p_s X) < 1.
    """
    sp = model_solvents(model.elb.a, model.elb.b, model.d, model.rho)
    if not sp.real_dominant:
        raise ComplexMinimalSolution("the minimal solution of the F-iteration is complex")
    x_lim = sp.x_underbar
    rx = spectral_radius(x_lim)
    rho_psx = model.p_s * rx
    if rho_psx < 1.0 - BOUNDARY_BAND:
        cls = "sink"
    elif rho_psx > 1.0 + BOUNDARY_BAND:
        cls = "saddle"
    else:
        cls = "boundary"
        if raise_on_boundary:
            raise BoundaryCase(f"rho(p_s X) = {rho_psx:.9g} lies within {BOUNDARY_BAND} of one")
    a_s = model.elb.a
    x_t = np.linalg.solve(a_s, x_lim)
    limit = np.linalg.solve(np.eye(model.n) - model.p_s * x_t @ a_s, x_t @ model.elb.c_s)
    return StabilityReport(
        x_underbar=x_lim, rho_psx=rho_psx, classification=cls, p_threshold=1.0 / rx,
        limit=limit, arna_limit=limit if cls == "sink" else None, solvents=sp,
    )


def mixing_coefficients(x1, solvents: SolventPair) -> tuple[Array, Array]:
    """(C1, C2) with K_j' = C1' S1'^j + C2' S2'^j, K_0 = I and K_1 = X_1^{-1}."""
    s1, s2 = solvents.s1, solvents.s2
    k1t = np.linalg.inv(np.asarray(x1).T)
    c2 = np.linalg.solve(s2 - s1, k1t - s1)
    return np.eye(s1.shape[0]) - c2, c2


def c1_condition(init: InitialConditions, model: ModelSpec, solvents: SolventPair | None = None) -> float:
    """Condition number of C1; the X_ell iteration reaches X_underbar only if it is finite.

    Measured against the plain dominant solvent, C1 is singular whenever
    rho sits among the N largest pencil eigenvalues, since every X_ell maps
    ker D like A* does.  ``model_solvents`` holds that root out, which keeps
    C1 regular for both initial conditions.
    """
    if solvents is None:
        solvents = model_solvents(model.elb.a, model.elb.b, model.d, model.rho)
    c1, _ = mixing_coefficients(init.x1, solvents)
    return float(np.linalg.cond(c1))


def saddle_bracket(init: InitialConditions, model: ModelSpec, solvents: SolventPair | None = None) -> Array:
    """C1'(p_s I - S1')^{-1} C_s* + C2'(p_s I - S2')^{-1} C_s* + A* M(1).

    Zero exactly when the initial pair puts the sequence on the saddle path.
    """
    if solvents is None:
        solvents = model_solvents(model.elb.a, model.elb.b, model.d, model.rho)
    s1, s2 = solvents.s1, solvents.s2
    n = model.n
    eye = np.eye(n)
    c1, c2 = mixing_coefficients(init.x1, solvents)
    cs = model.elb.c_s
    ps = model.p_s
    out = (c1.T @ np.linalg.solve(ps * eye - s1.T, cs)
           + c2.T @ np.linalg.solve(ps * eye - s2.T, cs)
           + model.elb.a @ init.m1)
    return np.real_if_close(out)


def detect_divergence(values, threshold: float = DIVERGENCE_NORM, run: int = DIVERGENCE_RUN) -> int | None:
    """First index where the norm exceeds ``threshold`` after ``run`` consecutive increases."""
    norms = np.array([np.max(np.abs(v)) for v in values])
    streak = 0
    for i in range(1, len(norms)):
        streak = streak + 1 if norms[i] > norms[i - 1] else 0
        if norms[i] > threshold and streak >= run:
            return i
    return None


# ---------------------------------------------------------------- finite differences

def _impact(model: ModelSpec, ell: int, w_b0: float, w_s0: float, flavor: str) -> Array:
    if flavor == "peg":
        sol = assemble_states(model, ell, w_b0, w_s0, verify=False)
        return sol.y_states()[0]
    from .arna import solve_fixed_window

    path = solve_fixed_window(model, ell, w_b0, w_s0)
    return path.y[0]


def finite_difference_multiplier(
    model: ModelSpec,
    ell: int,
    eps: float = 1e-6,
    flavor: str = "peg",
    w_b0: float = 0.0,
) -> Array:
    """(E Y_t | w_b0, eps) - (E Y_t | w_b0, 0), divided by eps, for a spell of ``ell``.

    With a nonzero ``w_b0`` and a policy rule attached, both shocks must
    produce the same verified spell length ``ell``.  A step-halving check
    guards against a nonlinear response.
    """
    if flavor not in FLAVORS:
        raise ValueError(f"flavor must be one of {FLAVORS}")
    if w_b0 != 0.0 and model.policy_rule is not None and flavor == "peg":
        for ws in (0.0, eps):
            got = find_duration(model, w_b0, ws, check_scenario=False).ell
            if got != ell:
                raise DurationChanged(f"shocks ({w_b0}, {ws}) bind for {got} periods, expected {ell}")
    base = _impact(model, ell, w_b0, 0.0, flavor)
    full = (_impact(model, ell, w_b0, eps, flavor) - base) / eps
    half = (_impact(model, ell, w_b0, eps / 2, flavor) - base) / (eps / 2)
    if np.max(np.abs(full - half)) > 1e-6 * max(1.0, np.max(np.abs(full))):
        raise SolverError("finite-difference multiplier fails the step-halving check")
    return full


def write_multipliers_csv(seqs: list[MultiplierSequence], names, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flavor", "ell", "variable", "value"])
        for seq in seqs:
            for ell, v in enumerate(seq.values, start=1):
                for name, val in zip(names, v):
                    w.writerow([seq.flavor, ell, name, repr(float(val))])
