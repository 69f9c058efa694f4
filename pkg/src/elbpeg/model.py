"""Two-regime piecewise-linear model class.

At the lower bound the forward block reads

    Y_t = A* E_t Y_{t+1} + B* x_t + C_b* w_b,t + C_s* w_s,t + E*,

and away from it the unstarred matrices apply with E = 0.  A single backward
variable follows x_t = rho x_{t-1} + D Y_t.  Shocks decay in expectation at
rates p_b (baseline) and p_s (scenario).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, SingularA0

Array = np.ndarray


def _mat(m, n: int, name: str) -> Array:
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {a.shape}")
    return a


def _vec(v, n: int, name: str) -> Array:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got {a.size}")
    return a


@dataclass(frozen=True)
class RegimeMatrices:
    a: Array
    b: Array
    c_b: Array
    c_s: Array
    e: Array = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        n = a.shape[0]
        object.__setattr__(self, "a", _mat(a, n, "a"))
        object.__setattr__(self, "b", _vec(self.b, n, "b"))
        object.__setattr__(self, "c_b", _vec(self.c_b, n, "c_b"))
        object.__setattr__(self, "c_s", _vec(self.c_s, n, "c_s"))
        e = np.zeros(n) if self.e is None else _vec(self.e, n, "e")
        object.__setattr__(self, "e", e)

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class PolicyRule:
    """Interest-rate rule r = y.Y + x*x + w_b*w_b + w_s*w_s (deviations).

    Used to reconstruct the shadow rate during the lower-bound spell and the
    post-exit rate states.
    """

    y: Array
    x: float = 0.0
    w_b: float = 0.0
    w_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(-1))

    def rate(self, y, x, w_b, w_s):
        return np.asarray(y) @ self.y + self.x * np.asarray(x) + self.w_b * np.asarray(w_b) + self.w_s * np.asarray(w_s)


@dataclass(frozen=True)
class ModelSpec:
    n: int
    elb: RegimeMatrices
    normal: RegimeMatrices
    d: Array
    rho: float
    p_b: float
    p_s: float
    r_lower: float
    variable_names: tuple[str, ...] = None
    x_name: str = "x"
    rate_index: int | None = None
    policy_rule: PolicyRule | None = None

    def __post_init__(self):
        object.__setattr__(self, "d", _vec(self.d, self.n, "d"))
        if self.variable_names is None:
            names = tuple(f"y{i + 1}" for i in range(self.n))
        else:
            names = tuple(self.variable_names)
        object.__setattr__(self, "variable_names", names)

    # short aliases used throughout the solvers
    @property
    def a_star(self) -> Array:
        return self.elb.a

    @property
    def b_star(self) -> Array:
        return self.elb.b

    def with_params(self, **kw) -> "ModelSpec":
        return replace(self, **kw)

    def rate(self, y, x, w_b, w_s):
        """Policy-rule rate, or None when no rule is attached."""
        if self.policy_rule is not None:
            return self.policy_rule.rate(y, x, w_b, w_s)
        if self.rate_index is not None:
            return np.asarray(y)[..., self.rate_index]
        return None


@dataclass(frozen=True)
class StructuralForm:
    a0: Array
    a1: Array
    b0: Array
    c0_b: Array
    c0_s: Array
    e0: Array = None


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def reduce(structural: StructuralForm) -> RegimeMatrices:
    """Premultiply every block by a0^{-1}."""
    a0 = np.atleast_2d(np.asarray(structural.a0, dtype=float))
    n = a0.shape[0]
    if np.linalg.cond(a0) > 1e12:
        raise SingularA0("a0 is singular")
    e0 = np.zeros(n) if structural.e0 is None else structural.e0
    blocks = [structural.a1, structural.b0, structural.c0_b, structural.c0_s, e0]
    a, b, c_b, c_s, e = (np.linalg.solve(a0, np.asarray(m, dtype=float)) for m in blocks)
    return RegimeMatrices(a, b, c_b, c_s, e)


def validate(spec: ModelSpec) -> ValidationReport:
    """Check the model invariants; never raises."""
    rep = ValidationReport()
    v = rep.violations
    try:
        mats = [spec.elb.a, spec.elb.b, spec.elb.c_b, spec.elb.c_s, spec.elb.e,
                spec.normal.a, spec.normal.b, spec.normal.c_b, spec.normal.c_s, spec.d]
        if any(not np.all(np.isfinite(m)) for m in mats):
            v.append("non-finite matrix entries")
        if spec.elb.n != spec.n or spec.normal.n != spec.n:
            v.append("regime dimensions do not match n")
        if not (0.0 <= spec.rho < 1.0):
            v.append("rho out of [0,1)")
        if not (0.0 < spec.p_b < 1.0):
            v.append("p_b out of (0,1)")
        if not (0.0 < spec.p_s < 1.0):
            v.append("p_s out of (0,1)")
        if not spec.r_lower < 0.0:
            v.append("r̲ must be negative")
        if np.any(spec.normal.e != 0.0):
            v.append("normal-regime intercept must be zero")
        if len(spec.variable_names) != spec.n:
            v.append("variable_names length differs from n")
        if np.linalg.cond(spec.elb.a) > 1e12:
            v.append("A* singular")
        if not v:
            # I - qA must be invertible at the exit persistence actually used
            from .chain import solve_q

            try:
                q = solve_q(spec.normal.a, spec.normal.b, spec.d, spec.rho)
                if np.linalg.cond(np.eye(spec.n) - q * spec.normal.a) > 1e12:
                    v.append("I - qA singular")
            except Exception as exc:  # report-style: surface, don't raise
                v.append(f"exit persistence q unavailable: {exc}")
    except Exception as exc:
        v.append(f"malformed model: {exc}")
    return rep


_REQUIRED = ("n", "a_star", "b_star", "c_b_star", "c_s_star", "a", "b", "c_b", "c_s",
             "d", "rho", "p_b", "p_s", "r_lower")


def model_from_dict(cfg: dict) -> ModelSpec:
    missing = [k for k in _REQUIRED if k not in cfg]
    if missing:
        raise ConfigError(f"model config missing keys: {', '.join(missing)}")
    n = int(cfg["n"])
    try:
        elb = RegimeMatrices(
            np.reshape(cfg["a_star"], (n, n)), cfg["b_star"], cfg["c_b_star"], cfg["c_s_star"],
            cfg.get("e_star", np.zeros(n)),
        )
        normal = RegimeMatrices(np.reshape(cfg["a"], (n, n)), cfg["b"], cfg["c_b"], cfg["c_s"])
        rule = None
        if "policy_rule" in cfg:
            pr = cfg["policy_rule"]
            rule = PolicyRule(pr["y"], pr.get("x", 0.0), pr.get("w_b", 0.0), pr.get("w_s", 0.0))
        return ModelSpec(
            n=n, elb=elb, normal=normal, d=cfg["d"], rho=float(cfg["rho"]),
            p_b=float(cfg["p_b"]), p_s=float(cfg["p_s"]), r_lower=float(cfg["r_lower"]),
            variable_names=cfg.get("variable_names"), x_name=cfg.get("x_name", "x"),
            rate_index=cfg.get("rate_index"), policy_rule=rule,
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def model_to_dict(spec: ModelSpec) -> dict:
    out = {
        "n": spec.n,
        "a_star": spec.elb.a.ravel().tolist(),
        "b_star": spec.elb.b.tolist(),
        "c_b_star": spec.elb.c_b.tolist(),
        "c_s_star": spec.elb.c_s.tolist(),
        "e_star": spec.elb.e.tolist(),
        "a": spec.normal.a.ravel().tolist(),
        "b": spec.normal.b.tolist(),
        "c_b": spec.normal.c_b.tolist(),
        "c_s": spec.normal.c_s.tolist(),
        "d": spec.d.tolist(),
        "rho": spec.rho,
        "p_b": spec.p_b,
        "p_s": spec.p_s,
        "r_lower": spec.r_lower,
        "variable_names": list(spec.variable_names),
        "x_name": spec.x_name,
    }
    if spec.rate_index is not None:
        out["rate_index"] = spec.rate_index
    if spec.policy_rule is not None:
        pr = spec.policy_rule
        out["policy_rule"] = {"y": pr.y.tolist(), "x": pr.x, "w_b": pr.w_b, "w_s": pr.w_s}
    return out


def load_model(path: str | Path) -> ModelSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"model file not found: {path}")
    with open(path) as fh:
        try:
            cfg = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path} does not hold a mapping")
    return model_from_dict(cfg)
