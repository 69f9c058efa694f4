"""Penalized minimum-distance estimation against expectations data.

The objective is

    G(theta) W G(theta)' + tau_e * E(theta) + tau_ell * pen(ell(theta) - ell_data),

where G stacks sqrt(weight) * (model - data) over the observed forecast rows,
E is an Euler-error measure supplied by a pluggable oracle and pen is either
the squared deviation (default) or an indicator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize as sp_minimize

from .chain import ChainSolution, equilibrium_residuals, expected_paths, find_duration
from .errors import ConfigError, MissingColumn, NoImprovement, ParseError, SolverError
from .nkhabits import HabitsParams, build_model

COLUMNS = ("variable", "horizon", "value", "weight")


@dataclass(frozen=True)
class DataRow:
    variable: str
    horizon: int
    value: float
    weight: float = 1.0


@dataclass(frozen=True)
class ExpectationsData:
    rows: tuple
    ell_data: int | None = None

    def __post_init__(self):
        if not self.rows:
            raise ConfigError("no data rows")
        for r in self.rows:
            if r.horizon < 0:
                raise ConfigError(f"negative horizon for {r.variable}")
            if r.weight < 0:
                raise ConfigError(f"negative weight for {r.variable}")

    @property
    def max_horizon(self) -> int:
        return max(r.horizon for r in self.rows)


@dataclass
class EstimationConfig:
    free: dict                              # name -> (lower, upper)
    fixed: dict = field(default_factory=dict)
    start: dict = field(default_factory=dict)
    weight_matrix: np.ndarray | None = None
    tau_e: float = 1000.0
    tau_ell: float = 1000.0
    duration_penalty: str = "squared"       # or "indicator"
    restarts: int = 8
    max_evals: int = 2000
    xatol: float = 1e-10
    fatol: float = 1e-14
    jitter: float = 0.1
    seed: int = 0
    euler_oracle: Callable | None = None

    def __post_init__(self):
        if not self.free:
            raise ConfigError("at least one free parameter is required")
        for name, (lo, hi) in self.free.items():
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise ConfigError(f"bounds for {name} must be finite and ordered")
        if self.weight_matrix is not None:
            w = np.atleast_2d(np.asarray(self.weight_matrix, dtype=float))
            if w.shape[0] == 1 and w.shape[1] > 1:
                w = np.diag(w[0])
            if not np.allclose(w, w.T):
                raise ConfigError("weight matrix must be symmetric")
            if np.min(np.linalg.eigvalsh(w)) < -1e-12:
                raise ConfigError("weight matrix must be positive semidefinite")
            self.weight_matrix = w
        if self.duration_penalty not in ("squared", "indicator"):
            raise ConfigError("duration_penalty must be 'squared' or 'indicator'")

    @property
    def names(self) -> list[str]:
        return list(self.free)


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    fit: float
    euler: float
    duration: float
    ell: int | None
    reason: str = ""


@dataclass(frozen=True)
class EstimationResult:
    theta_md: dict
    objective: ObjectiveValue
    trace: list       # (start index, theta tuple, objective) per accepted step
    evaluations: int
    no_improvement: bool = False

    @property
    def ell_model(self) -> int | None:
        return self.objective.ell


# ---------------------------------------------------------------- model side

def split_theta(theta: dict) -> tuple[HabitsParams, float, float]:
    """Separate structural parameters from the impact shock sizes."""
    theta = dict(theta)
    xi0 = float(theta.pop("xi0", -0.02))
    g0 = float(theta.pop("g0", 0.0))
    return HabitsParams(**theta), xi0, g0


def model_expectations(params, ell: int | None = None, horizon: int = 12, xi0: float = -0.02, g0: float = 0.0):
    """Expected paths E_t Z_{t+n}, n = 0..horizon, for the habits model.

    Returns ``(paths, solution)`` where ``paths`` maps ``c``, ``y``, ``pi``,
    ``r``, ``lam`` to arrays.  Output is y = s_c c + s_g g.  When ``ell`` is
    None the spell length is found by guess and verify.
    """
    from .chain import assemble_states

    model = build_model(params)
    if ell is None:
        sol = find_duration(model, xi0, g0, check_scenario=False)
    else:
        sol = assemble_states(model, ell, xi0, g0, verify=False)
    paths = {k: expected_paths(sol.spec, v, horizon) for k, v in sol.states.items()}
    paths["y"] = params.s_c * paths["c"] + params.s_g * paths["w_s"]
    return paths, sol


def default_euler(model, solution: ChainSolution, paths) -> float:
    """Squared max linear equilibrium residual; zero up to round-off."""
    res = equilibrium_residuals(solution, model, horizon=40)
    return max(res["forward"], res["backward"]) ** 2


def objective(theta: dict, data: ExpectationsData, config: EstimationConfig) -> ObjectiveValue:
    """Objective with its decomposition; +inf with a reason when the model fails."""
    full = {**config.fixed, **theta}
    try:
        params, xi0, g0 = split_theta(full)
        paths, sol = model_expectations(params, None, data.max_horizon, xi0, g0)
    except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
        return ObjectiveValue(math.inf, math.inf, 0.0, 0.0, None, str(exc))

    gaps = []
    for r in data.rows:
        if r.variable not in paths:
            raise ConfigError(f"unknown observable {r.variable!r}")
        gaps.append(math.sqrt(r.weight) * (paths[r.variable][r.horizon] - r.value))

    if config.euler_oracle is not None:
        euler = float(config.euler_oracle(full, paths))
    else:
        euler = default_euler(build_model(params), sol, paths)
    return decompose(gaps, config.weight_matrix, config.tau_e, euler, config.tau_ell,
                     sol.ell, data.ell_data, config.duration_penalty)


def decompose(gaps, weight_matrix, tau_e: float, euler: float, tau_ell: float,
              ell: int | None, ell_data: int | None, penalty: str = "squared") -> ObjectiveValue:
    """Assemble G W G' + tau_e E + tau_ell pen(ell - ell_data)."""
    g = np.asarray(gaps, dtype=float)
    w = np.eye(g.size) if weight_matrix is None else np.asarray(weight_matrix, dtype=float)
    if w.shape != (g.size, g.size):
        raise ConfigError(f"weight matrix is {w.shape}, data has {g.size} rows")
    fit = float(g @ w @ g)
    if euler < 0:
        raise ValueError("Euler-error measure must be nonnegative")
    e_term = tau_e * euler
    dur = 0.0
    if ell_data is not None and ell is not None and tau_ell:
        dev = ell - ell_data
        dur = tau_ell * (dev ** 2 if penalty == "squared" else float(dev != 0))
    return ObjectiveValue(fit + e_term + dur, fit, e_term, dur, ell)


# ---------------------------------------------------------------- optimizer

def _starts(config: EstimationConfig) -> list[np.ndarray]:
    rng = np.random.default_rng(config.seed)
    lo = np.array([b[0] for b in config.free.values()])
    hi = np.array([b[1] for b in config.free.values()])
    base = np.array([config.start.get(k, 0.5 * (lo[i] + hi[i])) for i, k in enumerate(config.names)])
    out = [np.clip(base, lo, hi)]
    for _ in range(config.restarts - 1):
        jit = base + config.jitter * (hi - lo) * rng.uniform(-1.0, 1.0, size=base.size)
        out.append(np.clip(jit, lo, hi))
    return out


def minimize(data: ExpectationsData, config: EstimationConfig, fn: Callable | None = None) -> EstimationResult:
    """Nelder-Mead from ``config.restarts`` jittered starts; best point wins.

    ``fn`` replaces the model objective (used for smoke tests); it maps a
    parameter dict to a float.
    """
    names = config.names
    bounds = list(config.free.values())
    cache: dict = {}

    def evaluate(x) -> float:
        key = tuple(np.round(np.asarray(x, dtype=float), 15))
        if key not in cache:
            theta = dict(zip(names, map(float, x)))
            cache[key] = fn(theta) if fn is not None else objective(theta, data, config).total
        return cache[key]

    best_x, best_f = None, math.inf
    trace = []
    first_f = None
    for start, x0 in enumerate(_starts(config)):
        f0 = evaluate(x0)
        if first_f is None:
            first_f = f0
        steps = [(start, tuple(map(float, x0)), f0)]

        # scipy hands back the best vertex, so f is non-increasing per start
        def callback(xk, steps=steps, start=start):
            steps.append((start, tuple(map(float, xk)), evaluate(xk)))

        res = sp_minimize(
            evaluate, x0, method="Nelder-Mead", bounds=bounds, callback=callback,
            options={"maxfev": config.max_evals, "xatol": config.xatol, "fatol": config.fatol},
        )
        trace.extend(steps)
        cand = (float(res.fun), tuple(res.x))
        if best_x is None or cand < (best_f, tuple(best_x)):
            best_f, best_x = cand[0], np.array(res.x)

    if not math.isfinite(best_f):
        raise NoImprovement("no start produced a finite objective")
    theta = dict(zip(names, map(float, best_x)))
    if fn is not None:
        obj = ObjectiveValue(best_f, best_f, 0.0, 0.0, None)
    else:
        obj = objective(theta, data, config)
    flagged = first_f is not None and best_f >= first_f and math.isfinite(first_f) and first_f > 0
    return EstimationResult(theta, obj, trace, len(cache), flagged)


# ---------------------------------------------------------------- I/O

def ingest_csv(path: str | Path, ell_data: int | None = None) -> ExpectationsData:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", 1) from None
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"missing columns: {', '.join(missing)}")
        idx = {c: header.index(c) for c in COLUMNS}
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                h = int(rec[idx["horizon"]])
                rows.append(DataRow(rec[idx["variable"]].strip(), h,
                                    float(rec[idx["value"]]), float(rec[idx["weight"]])))
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), lineno) from exc
    if not rows:
        raise ConfigError("no data rows")
    return ExpectationsData(tuple(rows), ell_data)


def export_csv(data: ExpectationsData, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in data.rows:
            w.writerow([r.variable, r.horizon, repr(r.value), repr(r.weight)])


def synthetic_data(theta: dict, variables=("c", "pi", "r"), horizon: int = 12) -> ExpectationsData:
    """Noiseless expectations generated by the model at ``theta``."""
    params, xi0, g0 = split_theta(theta)
    paths, sol = model_expectations(params, None, horizon, xi0, g0)
    rows = tuple(DataRow(v, n, float(paths[v][n]), 1.0) for v in variables for n in range(horizon + 1))
    return ExpectationsData(rows, sol.ell)


def write_result_csv(result: EstimationResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "value"])
        for k, v in result.theta_md.items():
            w.writerow([k, repr(v)])
        o = result.objective
        w.writerow(["objective", repr(o.total)])
        w.writerow(["fit", repr(o.fit)])
        w.writerow(["euler", repr(o.euler)])
        w.writerow(["duration", repr(o.duration)])
        w.writerow(["ell_model", o.ell])
