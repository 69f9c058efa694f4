"""Quadratic matrix equation S^2 - Psi1^T S + Psi2^T = 0 and the map F.

The sequence X_{j+1} = F(X_j) = A*(I - B*D + rho A* - rho X_j)^{-1} drives the
impact-multiplier recursion.  Its limit is tied to the dominant solvent S1 of
the quadratic matrix equation through X_limit = (S1^T)^{-1}.  Solvents are
assembled from eigenpairs of the first companion linearization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DefectiveEigenvectors,
    NoModulusGap,
    SingularAStar,
    SingularIterate,
    SolverError,
)

Array = np.ndarray

COND_CAP = 1e12
GAP_RTOL = 1e-8
RANK_TOL = 1e-10
IMAG_TOL = 1e-9
RESIDUAL_RTOL = 1e-9


@dataclass(frozen=True)
class QmeProblem:
    psi1: Array
    psi2: Array

    def __post_init__(self):
        p1 = np.atleast_2d(np.asarray(self.psi1, dtype=float))
        p2 = np.atleast_2d(np.asarray(self.psi2, dtype=float))
        if p1.shape != p2.shape or p1.shape[0] != p1.shape[1]:
            raise ValueError(f"psi1 {p1.shape} and psi2 {p2.shape} must be equal square shapes")
        if not (np.all(np.isfinite(p1)) and np.all(np.isfinite(p2))):
            raise ValueError("psi1 and psi2 must be finite")
        object.__setattr__(self, "psi1", p1)
        object.__setattr__(self, "psi2", p2)

    @property
    def n(self) -> int:
        return self.psi1.shape[0]

    def residual(self, s: Array) -> Array:
        """Q(S) = S^2 - Psi1^T S + Psi2^T."""
        return s @ s - self.psi1.T @ s + self.psi2.T


@dataclass(frozen=True)
class SolventPair:
    """Dominant (s1) and minimal (s2) solvents.

    ``eigenvalues`` holds all 2N eigenvalues; the first N belong to s1 and
    each half is sorted by decreasing modulus.  ``real_dominant`` is False
    when s1 kept imaginary parts above round-off, i.e. the
    real-dominant-solvent assumption fails.  ``structural`` counts the
    eigenvalues held out of s1 as unreachable (see ``model_solvents``).
    """

    s1: Array
    s2: Array
    eigenvalues: Array
    gap: float
    real_dominant: bool
    residuals: tuple[float, float] = (0.0, 0.0)
    structural: int = 0

    @property
    def x_underbar(self) -> Array:
        """Limit of the F-iteration, (S1^T)^{-1}."""
        return np.linalg.inv(self.s1.T)

    @property
    def x_overbar(self) -> Array:
        return np.linalg.inv(self.s2.T)

    def vandermonde(self) -> Array:
        n = self.s1.shape[0]
        eye = np.eye(n)
        return np.block([[eye, eye], [self.s1, self.s2]])


@dataclass(frozen=True)
class FixedPointReport:
    x_limit: Array
    iterates: list[Array] = field(repr=False)
    converged: bool
    iterations: int
    final_step_norm: float


def _as_vec(v) -> Array:
    return np.asarray(v, dtype=float).reshape(-1)


def build_qme(a_star, b_star, d, rho: float) -> QmeProblem:
    """Coefficients Psi1 = (I - B*D + rho A*)(A*)^{-1} and Psi2 = rho (A*)^{-1}."""
    a_star = np.atleast_2d(np.asarray(a_star, dtype=float))
    n = a_star.shape[0]
    bd = np.outer(_as_vec(b_star), _as_vec(d))
    if np.linalg.cond(a_star) > COND_CAP:
        raise SingularAStar("A* is not invertible (condition number above cap)")
    a_inv = np.linalg.inv(a_star)
    psi1 = (np.eye(n) - bd + rho * a_star) @ a_inv
    psi2 = rho * a_inv
    return QmeProblem(psi1, psi2)


def companion(problem: QmeProblem) -> Array:
    """First companion form of lambda^2 I - lambda Psi1^T + Psi2^T."""
    n = problem.n
    return np.block([
        [problem.psi1.T, -problem.psi2.T],
        [np.eye(n), np.zeros((n, n))],
    ])


def _assemble(vecs: Array, vals: Array) -> Array:
    return vecs @ np.diag(vals) @ np.linalg.inv(vecs)


def _block_rank_ok(vecs: Array) -> bool:
    cols = vecs / np.linalg.norm(vecs, axis=0, keepdims=True)
    sv = np.linalg.svd(cols, compute_uv=False)
    return sv[-1] > RANK_TOL


def _strip_imag(m: Array) -> tuple[Array, bool]:
    if np.max(np.abs(m.imag), initial=0.0) < IMAG_TOL:
        return m.real.copy(), True
    return m, False


def _split(vals: Array, n: int, structural: tuple[float, int] | None):
    """Indices of the dominant half, the rest, and the competing modulus."""
    order = np.argsort(-np.abs(vals), kind="stable")
    if structural is None or structural[1] == 0:
        return order[:n], order[n:], float(np.abs(vals[order[n]])), 0
    root, count = structural
    near = np.argsort(np.abs(vals - root), kind="stable")[:count]
    if np.max(np.abs(vals[near] - root)) > 1e-6 * max(1.0, abs(root)):
        raise SolverError(f"structural eigenvalue {root:.6g} not found in the pencil")
    held = set(near.tolist())
    free = [i for i in order if i not in held]
    top, left = free[:n], free[n:]
    rest = sorted(left + list(near), key=lambda i: -abs(vals[i]))
    competitor = float(np.abs(vals[left[0]])) if left else 0.0
    return np.array(top), np.array(rest), competitor, count


def solve_solvents(problem: QmeProblem, structural: tuple[float, int] | None = None) -> SolventPair:
    """Dominant and minimal solvents from the companion eigendecomposition.

    Parameters
    ----------
    problem : QmeProblem
    structural : (float, int), optional
        An eigenvalue and its multiplicity to keep out of the dominant
        solvent.  By default s1 takes the N eigenvalues of largest modulus.

    Raises
    ------
    NoModulusGap
        When the N-th selected modulus is not separated from the next candidate.
    DefectiveEigenvectors
        When either half of the eigenvectors is rank deficient.
    """
    n = problem.n
    vals, vecs = np.linalg.eig(companion(problem))
    top, rest, competitor, held = _split(vals, n, structural)
    order = np.concatenate([top, rest])
    vals = vals[order]
    vecs = vecs[:, order]
    mod = np.abs(vals)
    gap = float(mod[n - 1] - competitor)
    if gap < GAP_RTOL * max(1.0, mod[n - 1]):
        raise NoModulusGap(f"|lambda_N|={mod[n - 1]:.6g} and the next modulus {competitor:.6g} are not separated")

    # eigenvector of the quadratic pencil is the lower block of the companion eigenvector
    v_top, v_bot = vecs[n:, :n], vecs[n:, n:]
    if not (_block_rank_ok(v_top) and _block_rank_ok(v_bot)):
        raise DefectiveEigenvectors("eigenvector block is rank deficient")

    s1, real_dominant = _strip_imag(_assemble(v_top, vals[:n]))
    s2, _ = _strip_imag(_assemble(v_bot, vals[n:]))

    scale = 1.0 + np.linalg.norm(problem.psi1, np.inf) + np.linalg.norm(problem.psi2, np.inf)
    r1 = float(np.linalg.norm(problem.residual(s1), np.inf))
    r2 = float(np.linalg.norm(problem.residual(s2), np.inf))
    if max(r1, r2) > RESIDUAL_RTOL * scale:
        raise SolverError(f"solvent residuals too large ({r1:.3g}, {r2:.3g})")
    return SolventPair(s1, s2, vals, gap, real_dominant, (r1, r2), held)


def model_solvents(a_star, b_star, d, rho: float) -> SolventPair:
    """Solvents that govern the F-iteration started from a model's X_1.

    F maps the set {X : X k = A* k for k in ker D} into itself and both
    initial conditions of the multiplier recursion lie in it.  On that set
    the pencil has the eigenvalue rho with multiplicity N - rank(D) whose
    eigenvectors can never be reached, so they are held out of s1 and the
    limit of the iteration is the (S1^T)^{-1} of the remaining eigenvalues.
    """
    a_star = np.atleast_2d(np.asarray(a_star, dtype=float))
    n = a_star.shape[0]
    count = n - int(np.any(_as_vec(d) != 0.0))
    problem = build_qme(a_star, b_star, d, rho)
    return solve_solvents(problem, (float(rho), count) if count else None)


def f_map(x: Array, a_star, b_star, d, rho: float, step: int = 0) -> Array:
    """One application of F(X) = A*(I - B*D + rho A* - rho X)^{-1}."""
    a_star = np.atleast_2d(np.asarray(a_star, dtype=float))
    n = a_star.shape[0]
    inner = np.eye(n) - np.outer(_as_vec(b_star), _as_vec(d)) + rho * (a_star - x)
    if np.linalg.cond(inner) > COND_CAP:
        raise SingularIterate("I - B*D + rho A* - rho X is numerically singular", step)
    return a_star @ np.linalg.inv(inner)


def iterate_f(x1, a_star, b_star, d, rho: float, max_iter: int = 10_000, tol: float = 1e-14) -> FixedPointReport:
    """Iterate X_{j+1} = F(X_j) from ``x1`` until the step norm drops below ``tol``."""
    x = np.atleast_2d(np.asarray(x1, dtype=float))
    iterates = [x]
    step_norm = np.inf
    for j in range(1, max_iter + 1):
        x_new = f_map(x, a_star, b_star, d, rho, step=j)
        step_norm = float(np.linalg.norm(x_new - x, np.inf))
        x = x_new
        iterates.append(x)
        if step_norm < tol:
            return FixedPointReport(x, iterates, True, j, step_norm)
    return FixedPointReport(x, iterates, False, max_iter, step_norm)


def spectral_radius(m) -> float:
    m = np.atleast_2d(np.asarray(m))
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def write_eigenvalues_csv(pair: SolventPair, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "re", "im", "modulus"])
        for i, lam in enumerate(pair.eigenvalues, start=1):
            w.writerow([i, repr(float(lam.real)), repr(float(lam.imag)), repr(float(abs(lam)))])
