import numpy as np
import pytest

from elbpeg.errors import NoModulusGap, SingularAStar, SingularIterate
from elbpeg.multiplier import initial_conditions
from elbpeg.nkhabits import build_model
from elbpeg.qme import (
    QmeProblem,
    build_qme,
    f_map,
    iterate_f,
    model_solvents,
    solve_solvents,
    spectral_radius,
    write_eigenvalues_csv,
)


def test_build_qme_scalar():
    prob = build_qme([[0.5]], [0.0], [0.0], 0.9)
    assert prob.psi1 == pytest.approx(np.array([[2.9]]), abs=1e-14)
    assert prob.psi2 == pytest.approx(np.array([[1.8]]), abs=1e-14)


def test_build_qme_zero_d():
    a = np.array([[0.4, 0.1], [0.2, 0.6]])
    prob = build_qme(a, [3.0, -1.0], [0.0, 0.0], 0.3)
    a_inv = np.linalg.inv(a)
    np.testing.assert_allclose(prob.psi1, (np.eye(2) + 0.3 * a) @ a_inv, atol=1e-14)
    np.testing.assert_allclose(prob.psi2, 0.3 * a_inv, atol=1e-14)


def test_build_qme_desk_identity(desk_model):
    m = desk_model
    prob = build_qme(m.elb.a, m.elb.b, m.d, m.rho)
    lhs = prob.psi1 @ m.elb.a
    rhs = np.eye(2) - np.outer(m.elb.b, m.d) + m.rho * m.elb.a
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_build_qme_singular():
    with pytest.raises(SingularAStar):
        build_qme([[1.0, 2.0], [2.0, 4.0]], [0, 0], [0, 0], 0.5)


def test_scalar_solvents():
    pair = solve_solvents(QmeProblem(np.array([[2.5]]), np.array([[1.0]])))
    assert pair.s1[0, 0] == pytest.approx(2.0, abs=1e-12)
    assert pair.s2[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert pair.real_dominant


def test_decoupled_solvents():
    pair = solve_solvents(QmeProblem(2.5 * np.eye(2), np.eye(2)))
    np.testing.assert_allclose(pair.s1, 2 * np.eye(2), atol=1e-12)
    np.testing.assert_allclose(pair.s2, 0.5 * np.eye(2), atol=1e-12)


def test_no_gap():
    # lambda^2 - 2 lambda + 1: double root at one
    with pytest.raises(NoModulusGap):
        solve_solvents(QmeProblem(np.array([[2.0]]), np.array([[1.0]])))


def test_desk_solvents(desk_model):
    m = desk_model
    pair = solve_solvents(build_qme(m.elb.a, m.elb.b, m.d, m.rho))
    assert max(pair.residuals) < 1e-10
    np.testing.assert_allclose(np.abs(pair.eigenvalues), [1.3378, 0.71492, 0.52805, 0.5], atol=1e-4)
    assert np.min(np.abs(np.linalg.eigvals(pair.s1))) > np.max(np.abs(np.linalg.eigvals(pair.s2)))
    assert np.linalg.svd(pair.vandermonde(), compute_uv=False)[-1] > 1e-10
    rep = iterate_f(m.elb.a, m.elb.a, m.elb.b, m.d, m.rho)
    assert rep.converged
    np.testing.assert_allclose(rep.x_limit, pair.x_underbar, atol=1e-10)


def test_iterate_from_peg_x1(desk_model):

    m = desk_model
    pair = solve_solvents(build_qme(m.elb.a, m.elb.b, m.d, m.rho))
    rep = iterate_f(initial_conditions(m, flavor="peg").x1, m.elb.a, m.elb.b, m.d, m.rho, max_iter=199, tol=0.0)
    assert np.max(np.abs(rep.iterates[199] - pair.x_underbar)) < 1e-10
    fx = f_map(rep.x_limit, m.elb.a, m.elb.b, m.d, m.rho)
    assert np.max(np.abs(fx - rep.x_limit)) < 1e-10


def test_iterate_zero_d():
    a = np.array([[0.4, 0.1], [0.2, 0.6]])
    # X_1 = A* when D = 0, and A* is a fixed point
    rep = iterate_f(a, a, [1.0, 2.0], [0.0, 0.0], 0.5, max_iter=5, tol=0.0)
    for x in rep.iterates:
        np.testing.assert_allclose(x, a, atol=1e-14)


def test_iterate_rho_zero():
    a = np.array([[0.4, 0.1], [0.2, 0.6]])
    b, d = np.array([0.3, -0.2]), np.array([0.5, 0.1])
    expect = a @ np.linalg.inv(np.eye(2) - np.outer(b, d))
    rep = iterate_f(np.eye(2), a, b, d, 0.0, max_iter=5, tol=0.0)
    for x in rep.iterates[1:]:
        np.testing.assert_allclose(x, expect, atol=1e-14)


def test_singular_iterate_reports_step():
    # I - B*D + rho A* - rho X singular when X = (I + rho A*) / rho with D = 0
    a = np.array([[0.5]])
    x = (np.eye(1) + 0.5 * a) / 0.5
    with pytest.raises(SingularIterate) as exc:
        iterate_f(x, a, [0.0], [0.0], 0.5)
    assert exc.value.step == 1


@pytest.mark.parametrize("m, r", [
    ([[0.5]], 0.5),
    (np.diag([0.3, -0.9]), 0.9),
    ([[0.0, -1.0], [1.0, 0.0]], 1.0),
])
def test_spectral_radius(m, r):
    assert spectral_radius(m) == pytest.approx(r, abs=1e-14)


def test_eigenvalue_csv(tmp_path, desk_model):
    m = desk_model
    pair = solve_solvents(build_qme(m.elb.a, m.elb.b, m.d, m.rho))
    path = tmp_path / "eig.csv"
    write_eigenvalues_csv(pair, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "index,re,im,modulus"
    assert len(lines) == 5


def test_model_solvents_hold_out_unreachable_root(desk):
    # with strong habits the plain selection puts rho = h in S1, but the
    # iteration from the model's X_1 never sees that eigenvector
    m = build_model(desk.with_(h=0.95))
    a, b = m.elb.a, m.elb.b
    plain = solve_solvents(build_qme(a, b, m.d, m.rho))
    held = model_solvents(a, b, m.d, m.rho)
    assert held.structural == 1
    assert np.isclose(np.abs(plain.eigenvalues[:2]), m.rho).any()
    assert not np.isclose(np.abs(held.eigenvalues[:2]), m.rho).any()
    x1 = initial_conditions(m, flavor="peg").x1
    rep = iterate_f(x1, a, b, m.d, m.rho, max_iter=100_000, tol=1e-15)
    assert np.max(np.abs(rep.x_limit - held.x_underbar)) < 1e-8
    assert np.max(np.abs(rep.x_limit - plain.x_underbar)) > 0.1


def test_model_solvents_without_feedback():
    # D = 0: X = A* is a fixed point whatever rho is
    held = model_solvents([[2.0]], [0.3], [0.0], 0.8)
    plain = solve_solvents(build_qme([[2.0]], [0.3], [0.0], 0.8))
    assert held.x_underbar[0, 0] == pytest.approx(2.0, abs=1e-12)
    assert plain.x_underbar[0, 0] == pytest.approx(1.25, abs=1e-12)


def test_model_solvents_desk_unchanged(desk_model):
    m = desk_model
    a, b = m.elb.a, m.elb.b
    np.testing.assert_allclose(model_solvents(a, b, m.d, m.rho).s1, solve_solvents(build_qme(a, b, m.d, m.rho)).s1,
                               atol=1e-14)
