import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from elbpeg.chain import assemble_states, build_transition, expected_paths
from elbpeg.errors import SolverError
from elbpeg.estimate import DataRow, ExpectationsData, decompose, export_csv, ingest_csv
from elbpeg.nkhabits import DESK, build_model
from elbpeg.qme import build_qme, solve_solvents
from oracles import matrix_power_path

prob = st.floats(0.01, 0.99)
DESK_MODEL = build_model(DESK)


@given(prob, prob, st.floats(0.0, 0.99), st.integers(1, 10))
def test_transition_is_stochastic(p_s, p_b, q, ell):
    p = build_transition(p_s, p_b, q, ell).p_matrix
    assert p.shape == (ell + 3, ell + 3)
    assert np.all(p >= 0.0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-14)


@given(prob, prob, st.floats(0.0, 0.99), st.integers(1, 6), st.integers(0, 2**31))
def test_expected_path_is_matrix_power(p_s, p_b, q, ell, seed):
    spec = build_transition(p_s, p_b, q, ell)
    s = np.random.default_rng(seed).normal(size=spec.size)
    s[-1] = 0.0
    np.testing.assert_allclose(expected_paths(spec, s, 15), matrix_power_path(spec.u, spec.p_matrix, s, 15),
                               atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.floats(-0.05, 0.0), st.floats(-0.01, 0.01))
def test_shock_paths_decay_exactly(ell, w_b0, w_s0):
    sol = assemble_states(DESK_MODEL, ell, w_b0, w_s0, verify=False)
    n = np.arange(31)
    np.testing.assert_allclose(expected_paths(sol.spec, sol.states["w_b"], 30), DESK.p_b ** n * w_b0, atol=1e-15)
    np.testing.assert_allclose(expected_paths(sol.spec, sol.states["w_s"], 30), DESK.p_s ** n * w_s0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.floats(-0.05, 0.05), st.floats(-0.05, 0.05))
def test_states_are_linear_in_shocks(ell, a, b):
    one = assemble_states(DESK_MODEL, ell, a, 0.0, verify=False)
    two = assemble_states(DESK_MODEL, ell, 0.0, b, verify=False)
    both = assemble_states(DESK_MODEL, ell, a, b, verify=False)
    zero = assemble_states(DESK_MODEL, ell, 0.0, 0.0, verify=False)
    for k in DESK_MODEL.variable_names:
        lhs = both.states[k] - zero.states[k]
        rhs = (one.states[k] - zero.states[k]) + (two.states[k] - zero.states[k])
        np.testing.assert_allclose(lhs, rhs, atol=1e-14)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(0, 1e3), st.floats(0, 1),
       st.floats(0, 1e3), st.integers(0, 20), st.integers(0, 20))
def test_decomposition_identity(gaps, tau_e, euler, tau_ell, ell, ell_d):
    v = decompose(gaps, None, tau_e, euler, tau_ell, ell, ell_d)
    assert abs(v.total - (v.fit + v.euler + v.duration)) <= 1e-12 * max(1.0, abs(v.total))
    assert v.duration == tau_ell * (ell - ell_d) ** 2


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(1, 2), st.integers(0, 2**31))
def test_solvent_ordering(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(scale=0.4, size=(n, n)) + 0.5 * np.eye(n)
    try:
        pair = solve_solvents(build_qme(a, rng.normal(scale=0.5, size=n), rng.normal(scale=0.5, size=n),
                                        rng.uniform(0.05, 0.9)))
    except SolverError:
        return
    assert np.min(np.abs(np.linalg.eigvals(pair.s1))) > np.max(np.abs(np.linalg.eigvals(pair.s2)))
    assert np.linalg.svd(pair.vandermonde(), compute_uv=False)[-1] > 1e-10


names = st.sampled_from(["c", "pi", "r", "y"])
rows = st.builds(DataRow, names, st.integers(0, 40), st.floats(-1, 1, allow_nan=False),
                 st.floats(0, 10, allow_nan=False))


@settings(deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(rows, min_size=1, max_size=20), st.one_of(st.none(), st.integers(0, 12)))
def test_csv_round_trip(tmp_path, data_rows, ell_d):
    data = ExpectationsData(tuple(data_rows), ell_d)
    path = tmp_path / "rt.csv"
    export_csv(data, path)
    assert ingest_csv(path, ell_d) == data
