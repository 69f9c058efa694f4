"""Random model generators shared by the test modules."""

from __future__ import annotations

import numpy as np

from elbpeg.chain import solve_q, stable_root_count
from elbpeg.errors import SolverError
from elbpeg.model import ModelSpec, RegimeMatrices
from elbpeg.multiplier import initial_conditions, limit_multiplier
from elbpeg.nkhabits import HabitsParams, build_model


def random_qme_inputs(rng, n: int):
    a_star = rng.normal(scale=0.4, size=(n, n)) + 0.5 * np.eye(n)
    b_star = rng.normal(scale=0.5, size=n)
    d = rng.normal(scale=0.5, size=n)
    rho = rng.uniform(0.05, 0.9)
    return a_star, b_star, d, rho


def _regime(rng, n, elb: bool) -> RegimeMatrices:
    a = rng.normal(scale=0.25, size=(n, n)) + 0.4 * np.eye(n)
    b = rng.normal(scale=0.4, size=n)
    c_b = rng.normal(size=n)
    c_s = rng.normal(size=n)
    e = rng.normal(scale=0.01, size=n) if elb else None
    return RegimeMatrices(a, b, c_b, c_s, e)


def random_model(rng, n: int | None = None, max_tries: int = 200) -> ModelSpec:
    """Generic model whose normal regime has a unique admissible exit root
    and whose multiplier recursion has a real minimal solution."""
    for _ in range(max_tries):
        k = int(rng.integers(1, 3)) if n is None else n
        elb, normal = _regime(rng, k, True), _regime(rng, k, False)
        model = ModelSpec(
            n=k, elb=elb, normal=normal, d=rng.normal(scale=0.5, size=k),
            rho=float(rng.uniform(0.05, 0.9)), p_b=float(rng.uniform(0.5, 0.95)),
            p_s=float(rng.uniform(0.5, 0.95)), r_lower=-0.01,
        )
        if accept(model):
            return model
    raise RuntimeError("no acceptable draw")


def random_habits(rng) -> HabitsParams:
    while True:
        p = HabitsParams(
            sigma=float(rng.uniform(0.5, 2.0)), beta=0.99, kappa=float(rng.uniform(0.01, 0.1)),
            eta=float(rng.uniform(0.5, 2.0)), h=float(rng.uniform(0.1, 0.9)),
            phi_pi=float(rng.uniform(1.2, 2.5)), p_b=float(rng.uniform(0.5, 0.95)),
            p_s=float(rng.uniform(0.5, 0.95)),
        )
        if accept(build_model(p)):
            return p


def accept(model: ModelSpec) -> bool:
    try:
        if stable_root_count(model.normal.a, model.normal.b, model.d, model.rho) != 1:
            return False
        solve_q(model.normal.a, model.normal.b, model.d, model.rho)
        rep = limit_multiplier(model)
        if rep.classification == "boundary":
            return False
        for flavor in ("peg", "arna"):
            initial_conditions(model, flavor=flavor)
    except (SolverError, np.linalg.LinAlgError, ValueError):
        return False
    return True
