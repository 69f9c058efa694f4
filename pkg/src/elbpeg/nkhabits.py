"""New Keynesian model with consumption habits.

Forward variables are Y = (lambda, pi) (marginal-utility gap and inflation),
the backward variable is consumption c with c_t = h c_{t-1} + (1-h)/sigma lambda_t.
The baseline shock is the discount-factor wedge xi, the scenario shock is
government spending g.  Away from the bound the rate follows
r = phi_pi pi + phi_xi xi + phi_y (s_c c + s_g g).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .model import ModelSpec, PolicyRule, RegimeMatrices, StructuralForm, reduce


@dataclass(frozen=True)
class HabitsParams:
    sigma: float = 1.0
    beta: float = 0.99
    kappa: float = 0.05
    eta: float = 1.0
    h: float = 0.5
    s_c: float = 0.8
    s_g: float = 0.2
    phi_pi: float = 1.5
    phi_y: float = 0.0
    phi_xi: float = 0.0
    r_lower: float = -0.01
    p_b: float = 0.8
    p_s: float = 0.8

    def __post_init__(self):
        checks = [
            (self.sigma > 0, "sigma must be positive"),
            (0 < self.beta < 1, "beta must lie in (0,1)"),
            (self.kappa > 0, "kappa must be positive"),
            (self.eta >= 0, "eta must be nonnegative"),
            (0 <= self.h < 1, "h must lie in [0,1)"),
            (self.s_c >= 0 and self.s_g >= 0, "shares must be nonnegative"),
            (abs(self.s_c + self.s_g - 1.0) < 1e-12, "s_c + s_g must equal 1"),
            (self.r_lower < 0, "r_lower must be negative"),
            (0 < self.p_b < 1, "p_b must lie in (0,1)"),
            (0 < self.p_s < 1, "p_s must lie in (0,1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def with_(self, **kw) -> "HabitsParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


DESK = HabitsParams()


def structural_forms(p: HabitsParams) -> tuple[StructuralForm, StructuralForm]:
    """(lower-bound, normal) structural forms of the Euler and Phillips equations.

    Rows: lambda_t = E lambda_{t+1} + E pi_{t+1} - r_t + xi_t and
    pi_t = beta E pi_{t+1} + kappa lambda_t + kappa eta (s_c c_t + s_g g_t).
    """
    k, ke = p.kappa, p.kappa * p.eta
    a1 = np.array([[1.0, 1.0], [0.0, p.beta]])
    elb = StructuralForm(
        a0=np.array([[1.0, 0.0], [-k, 1.0]]),
        a1=a1,
        b0=np.array([0.0, ke * p.s_c]),
        c0_b=np.array([1.0, 0.0]),
        c0_s=np.array([0.0, ke * p.s_g]),
        e0=np.array([-p.r_lower, 0.0]),
    )
    normal = StructuralForm(
        a0=np.array([[1.0, p.phi_pi], [-k, 1.0]]),
        a1=a1,
        b0=np.array([-p.phi_y * p.s_c, ke * p.s_c]),
        c0_b=np.array([1.0 - p.phi_xi, 0.0]),
        c0_s=np.array([-p.phi_y * p.s_g, ke * p.s_g]),
        e0=np.zeros(2),
    )
    return elb, normal


def build_model(p: HabitsParams) -> ModelSpec:
    elb_s, normal_s = structural_forms(p)
    elb = reduce(elb_s)
    nm = reduce(normal_s)
    normal = RegimeMatrices(nm.a, nm.b, nm.c_b, nm.c_s)
    rule = PolicyRule(y=[0.0, p.phi_pi], x=p.phi_y * p.s_c, w_b=p.phi_xi, w_s=p.phi_y * p.s_g)
    return ModelSpec(
        n=2, elb=elb, normal=normal, d=[(1.0 - p.h) / p.sigma, 0.0], rho=p.h,
        p_b=p.p_b, p_s=p.p_s, r_lower=p.r_lower, variable_names=("lam", "pi"),
        x_name="c", policy_rule=rule,
    )


# ---------------------------------------------------------------- one-period spell

STATE_ORDER = ("c1", "c2", "c3", "lam1", "lam2", "lam3", "pi1", "pi2", "pi3")
_C, _L, _P = 0, 3, 6

# row positions of the impact Euler and impact Phillips restrictions
EULER_IMPACT_ROW = 3
PHILLIPS_IMPACT_ROW = 6


@dataclass(frozen=True)
class Ell1States:
    values: dict
    q: float
    gamma: float
    s_xi: tuple
    s_g: tuple
    s_r: tuple

    def vector(self, var: str) -> np.ndarray:
        return np.array([self.values[f"{var}{i}"] for i in (1, 2, 3)] + [0.0])


def solve_qstar(p: HabitsParams) -> float:
    """Persistence q* of consumption when the rate stays at the bound forever."""
    from .chain import solve_q

    m = build_model(p)
    return solve_q(m.elb.a, m.elb.b, m.d, m.rho)


def qstar_from_solvent(p: HabitsParams) -> float:
    """q* implied by the minimal solution of the F-iteration.

    Under a permanent peg Y = G x with G solving
    (I - rho (A*)^{-1} X A*) G = rho (A*)^{-1} X B*, so q* = rho + D G.
    """
    from .qme import model_solvents

    m = build_model(p)
    a_s, b_s = m.elb.a, m.elb.b
    x_lim = model_solvents(a_s, b_s, m.d, m.rho).x_underbar
    xt = np.linalg.solve(a_s, x_lim)
    g = np.linalg.solve(np.eye(2) - m.rho * xt @ a_s, m.rho * xt @ b_s)
    return float(m.rho + m.d @ g)


def _system(p: HabitsParams, q: float, s_xi1: float, s_g1: float, rates: str):
    """Nine linear restrictions in the order of ``STATE_ORDER``.

    ``rates`` is ``"taylor"`` (r_1 = r̲, post-exit rates from the rule),
    ``"elb"`` (every rate state at r̲) or ``"zero"`` (every rate state 0).
    """
    h, sig, beta, kap = p.h, p.sigma, p.beta, p.kappa
    ps, pb = p.p_s, p.p_b
    ke = kap * p.eta
    dd = (1.0 - h) / sig
    gam = (pb - ps) / (1.0 - ps)
    s_xi2 = gam * s_xi1
    r1 = 0.0 if rates == "zero" else p.r_lower
    m = np.zeros((9, 9))
    v = np.zeros(9)
    c, lam, pi = _C, _L, _P

    # backward equation at n = 0, 1, 2
    m[0, c] = 1.0
    m[0, lam] = -dd
    m[1, c], m[1, c + 1] = ps - h, 1.0 - ps
    m[1, lam], m[1, lam + 1] = -dd * ps, -dd * (1.0 - ps)
    m[2, c + 1], m[2, c + 2] = pb - h, 1.0 - pb
    m[2, lam + 1], m[2, lam + 2] = -dd * pb, -dd * (1.0 - pb)

    # Euler, state 1 (bound binds)
    m[3, lam], m[3, lam + 1] = 1.0 - ps, -(1.0 - ps)
    m[3, pi], m[3, pi + 1] = -ps, -(1.0 - ps)
    v[3] = s_xi1 - r1
    # Euler, states 2 and 3
    m[4, lam + 1], m[4, lam + 2] = 1.0 - pb, -(1.0 - pb)
    m[4, pi + 1], m[4, pi + 2] = -pb, -(1.0 - pb)
    v[4] = s_xi2
    m[5, lam + 2] = 1.0 - q
    m[5, pi + 2] = -q
    if rates == "taylor":
        # s_r2 = phi_pi pi2 + phi_xi Gamma xi1 + phi_y s_c c2, s_r3 likewise without xi
        m[4, pi + 1] += p.phi_pi
        m[4, c + 1] += p.phi_y * p.s_c
        v[4] -= p.phi_xi * s_xi2
        m[5, pi + 2] += p.phi_pi
        m[5, c + 2] += p.phi_y * p.s_c
    else:
        v[4] -= r1
        v[5] -= r1

    # Phillips curve, states 1..3
    m[6, pi], m[6, pi + 1] = 1.0 - beta * ps, -beta * (1.0 - ps)
    m[6, c], m[6, lam] = -ke * p.s_c, -kap
    v[6] = ke * p.s_g * s_g1
    m[7, pi + 1], m[7, pi + 2] = 1.0 - beta * pb, -beta * (1.0 - pb)
    m[7, c + 1], m[7, lam + 1] = -ke * p.s_c, -kap
    m[8, pi + 2] = 1.0 - beta * q
    m[8, c + 2], m[8, lam + 2] = -ke * p.s_c, -kap
    return m, v, (r1, s_xi2)


def _solve(m, v):
    from .errors import SingularSystem

    if np.linalg.cond(m) > 1e13:
        raise SingularSystem("restriction system is singular")
    return np.linalg.solve(m, v)


def restrictions_ell1(
    p: HabitsParams,
    q: float | None = None,
    s_xi1: float = 0.0,
    s_g1: float = 0.0,
    mode: str = "ell1",
    rate_zero: bool = False,
) -> Ell1States:
    """Consumption, marginal-utility and inflation states for a one-period spell.

    In ``mode="ell_inf"`` the rate stays pegged in all three states and ``q``
    defaults to q*; ``rate_zero`` then sets the pegged rate states to 0.
    """
    from .chain import solve_q

    if mode == "ell1":
        rates = "taylor"
        if q is None:
            m = build_model(p)
            q = solve_q(m.normal.a, m.normal.b, m.d, m.rho)
    elif mode == "ell_inf":
        rates = "zero" if rate_zero else "elb"
        if q is None:
            q = solve_qstar(p)
    else:
        raise ValueError("mode must be 'ell1' or 'ell_inf'")
    m, v, (r1, s_xi2) = _system(p, q, s_xi1, s_g1, rates)
    x = _solve(m, v)
    vals = dict(zip(STATE_ORDER, x))
    if rates == "taylor":
        s_r = (r1,
               p.phi_pi * vals["pi2"] + p.phi_xi * s_xi2 + p.phi_y * p.s_c * vals["c2"],
               p.phi_pi * vals["pi3"] + p.phi_y * p.s_c * vals["c3"])
    else:
        s_r = (r1, r1, r1)
    return Ell1States(vals, q, (p.p_b - p.p_s) / (1.0 - p.p_s), (s_xi1, s_xi2, 0.0), (s_g1, 0.0, 0.0), s_r)


# ---------------------------------------------------------------- AD / AS lines

@dataclass(frozen=True)
class AsAdLines:
    """Impact relations c = slope * pi + intercept in the (pi, c) plane."""

    ad_slope: float
    ad_intercept: float
    as_slope: float
    as_intercept: float
    as_g_shift: float
    as_xi_shift: float
    q_used: float
    mode: str

    def intersection(self) -> tuple[float, float]:
        from .errors import NonIntersecting

        if abs(self.ad_slope - self.as_slope) < 1e-12:
            raise NonIntersecting("AD and AS slopes coincide")
        pi = (self.as_intercept - self.ad_intercept) / (self.ad_slope - self.as_slope)
        return pi, self.ad_slope * pi + self.ad_intercept


def _line(m, v, drop: int) -> tuple[float, float]:
    # drop one restriction, treat pi1 as given, read c1 at two values of pi1
    keep = [i for i in range(9) if i != drop]
    others = [j for j in range(9) if j != _P]
    sub = m[np.ix_(keep, others)]
    col = m[keep, _P]
    c_pos = others.index(_C)
    pts = []
    for pi1 in (0.0, 1.0):
        x = _solve(sub, v[keep] - col * pi1)
        pts.append(x[c_pos])
    return pts[1] - pts[0], pts[0]


def asad_lines(
    p: HabitsParams,
    q: float | None = None,
    s_xi1: float = 0.0,
    s_g1: float = 0.0,
    mode: str = "ell1",
    rate_zero: bool = False,
) -> AsAdLines:
    """AD (impact Phillips curve removed) and AS (impact Euler removed) lines."""
    from .chain import solve_q

    if q is None:
        if mode == "ell1":
            m0 = build_model(p)
            q = solve_q(m0.normal.a, m0.normal.b, m0.d, m0.rho)
        else:
            q = solve_qstar(p)
    rates = "taylor" if mode == "ell1" else ("zero" if rate_zero else "elb")
    m, v, _ = _system(p, q, s_xi1, s_g1, rates)
    ad_s, ad_i = _line(m, v, PHILLIPS_IMPACT_ROW)
    as_s, as_i = _line(m, v, EULER_IMPACT_ROW)
    # shift coefficients of the AS intercept by unit differencing
    _, v_g, _ = _system(p, q, s_xi1, s_g1 + 1.0, rates)
    _, v_x, _ = _system(p, q, s_xi1 + 1.0, s_g1, rates)
    g_shift = _line(m, v_g, EULER_IMPACT_ROW)[1] - as_i
    xi_shift = _line(m, v_x, EULER_IMPACT_ROW)[1] - as_i
    return AsAdLines(ad_s, ad_i, as_s, as_i, g_shift, xi_shift, q, mode)


def _slope_gap(p: HabitsParams, ps: float, mode: str, q: float) -> float:
    lines = asad_lines(p.with_(p_s=ps), q=q, mode=mode, rate_zero=True)
    return lines.ad_slope - lines.as_slope


def threshold_pbar(p: HabitsParams, mode: str = "ell_inf", grid: int = 400, tol: float = 1e-13) -> float:
    """p_s at which the AD and AS slopes cross.

    ``mode="ell_inf"`` gives the threshold under q* (it does not depend on
    p_s, so q* is solved once); ``mode="ell1"`` uses the exit persistence q.
    Sign changes across a pole of the slopes are discarded.
    """
    from .chain import solve_q
    from .errors import NoRootInUnitInterval, SolverError

    if mode == "ell_inf":
        q = solve_qstar(p)
    else:
        m0 = build_model(p)
        q = solve_q(m0.normal.a, m0.normal.b, m0.d, m0.rho)

    def f(ps):
        try:
            return _slope_gap(p, ps, mode, q)
        except SolverError:
            return np.nan

    xs = np.linspace(1e-6, 1 - 1e-6, grid)
    fs = np.array([f(x) for x in xs])
    roots = []
    for i in range(grid - 1):
        lo, hi, flo, fhi = xs[i], xs[i + 1], fs[i], fs[i + 1]
        if not (np.isfinite(flo) and np.isfinite(fhi)) or np.sign(flo) == np.sign(fhi):
            continue
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            if not np.isfinite(fm):
                break
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi, fhi = mid, fm
        root = 0.5 * (lo + hi)
        # a genuine crossing has a small gap, a pole a huge one
        if abs(f(root)) < 1e-6 * max(1.0, np.nanmax(np.abs(fs))):
            roots.append(root)
    if not roots:
        raise NoRootInUnitInterval("AD and AS slopes never cross for p_s in (0,1)")
    return roots[0]


def mccf_threshold(p: HabitsParams) -> float:
    """Root in (0,1) of kappa (sigma + eta s_c) p = sigma (1 - p)(1 - beta p)."""
    from .errors import NoRootInUnitInterval

    k = p.kappa * (p.sigma + p.eta * p.s_c)

    def g(x):
        return k * x - p.sigma * (1 - x) * (1 - p.beta * x)

    lo, hi = 0.0, 1.0
    if np.sign(g(lo)) == np.sign(g(hi)):
        raise NoRootInUnitInterval("no MC-CF threshold in (0,1)")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sign(g(mid)) == np.sign(g(lo)):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def p_deflation(p: HabitsParams) -> float:
    """p^D = 1 / rho(X) for the habits model."""
    from .qme import model_solvents, spectral_radius

    m = build_model(p)
    return 1.0 / spectral_radius(model_solvents(m.elb.a, m.elb.b, m.d, m.rho).x_underbar)
