import math

import numpy as np
import pytest

from elbpeg.errors import ConfigError, MissingColumn, NoImprovement, ParseError
from elbpeg.estimate import (
    DataRow,
    EstimationConfig,
    ExpectationsData,
    decompose,
    export_csv,
    ingest_csv,
    minimize,
    model_expectations,
    objective,
    synthetic_data,
    write_result_csv,
)
from elbpeg.nkhabits import DESK

FREE = {"h": (0.1, 0.9), "p_b": (0.5, 0.95), "p_s": (0.5, 0.95)}
TRUTH = {"h": 0.5, "p_b": 0.8, "p_s": 0.8}


@pytest.fixture(scope="module")
def desk_data():
    return synthetic_data(TRUTH)


# ---------------------------------------------------------------- decomposition

def test_decompose_zero():
    assert decompose([0.0, 0.0], None, 0.0, 0.0, 0.0, 4, 4).total == 0.0


def test_decompose_fit_only():
    assert decompose([1.0, 2.0], np.eye(2), 0.0, 0.0, 0.0, None, None).total == 5.0


def test_decompose_duration():
    assert decompose([0.0], None, 0.0, 0.0, 1000.0, 4, 4).duration == 0.0
    assert decompose([0.0], None, 0.0, 0.0, 1000.0, 6, 4).duration == 4000.0
    assert decompose([0.0], None, 0.0, 0.0, 1000.0, 6, 4, "indicator").duration == 1000.0


def test_decompose_sums():
    v = decompose([0.3, -0.1, 0.2], np.diag([1.0, 2.0, 0.5]), 1000.0, 1e-3, 1000.0, 5, 3)
    assert abs(v.total - (v.fit + v.euler + v.duration)) < 1e-12
    assert v.fit == pytest.approx(0.09 + 0.02 + 0.02)


def test_decompose_rejects_shape():
    with pytest.raises(ConfigError):
        decompose([1.0, 2.0], np.eye(3), 0.0, 0.0, 0.0, None, None)


# ---------------------------------------------------------------- model side

def test_impact_horizon_is_state():
    paths, sol = model_expectations(DESK, horizon=0)
    assert paths["c"][0] == sol.states["c"][0]


def test_geometric_paths_without_habits():
    p = DESK.with_(h=0.0, p_b=0.8, p_s=0.8)
    paths, sol = model_expectations(p, ell=1, horizon=10, xi0=-0.002)
    np.testing.assert_allclose(paths["c"], 0.8 ** np.arange(11) * sol.states["c"][0], atol=1e-12)


def test_hump_with_strong_habits():
    paths, _ = model_expectations(DESK.with_(h=0.8), horizon=12)
    c = paths["c"]
    assert any(c[n + 1] < c[n] < 0 for n in range(12))


def test_output_mapping():
    paths, _ = model_expectations(DESK, horizon=5, g0=0.003)
    np.testing.assert_allclose(paths["y"], DESK.s_c * paths["c"] + DESK.s_g * paths["w_s"], atol=0)


def test_objective_at_truth(desk_data):
    cfg = EstimationConfig(free=FREE)
    v = objective(TRUTH, desk_data, cfg)
    assert v.fit < 1e-28 and v.duration == 0.0
    # linear residuals vanish, so the default Euler term is negligible
    assert v.euler / cfg.tau_e < 1e-16
    assert abs(v.total - (v.fit + v.euler + v.duration)) < 1e-12


def test_objective_failure_is_sentinel(desk_data):
    v = objective({"h": 0.5, "p_b": 0.8, "p_s": 1.5}, desk_data, EstimationConfig(free=FREE))
    assert math.isinf(v.total) and v.reason


def test_custom_euler_oracle(desk_data):
    cfg = EstimationConfig(free=FREE, tau_e=10.0, euler_oracle=lambda theta, paths: 0.25)
    assert objective(TRUTH, desk_data, cfg).euler == 2.5


def test_duration_term_active(desk_data):
    data = ExpectationsData(desk_data.rows, desk_data.ell_data + 2)
    assert objective(TRUTH, data, EstimationConfig(free=FREE)).duration == 4000.0


# ---------------------------------------------------------------- configuration

def test_config_validation():
    with pytest.raises(ConfigError):
        EstimationConfig(free={})
    with pytest.raises(ConfigError):
        EstimationConfig(free={"h": (0.9, 0.1)})
    with pytest.raises(ConfigError):
        EstimationConfig(free=FREE, weight_matrix=[[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ConfigError):
        EstimationConfig(free=FREE, weight_matrix=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ConfigError):
        EstimationConfig(free=FREE, duration_penalty="cubic")
    diag = EstimationConfig(free=FREE, weight_matrix=[[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(diag.weight_matrix, np.diag([1.0, 2.0, 3.0]))


# ---------------------------------------------------------------- optimizer

def test_quadratic_bowl():
    cfg = EstimationConfig(free={"a": (-5.0, 5.0), "b": (-5.0, 5.0)}, restarts=3)
    res = minimize(None, cfg, fn=lambda t: (t["a"] - 1.3) ** 2 + 2 * (t["b"] + 0.7) ** 2)
    assert res.theta_md["a"] == pytest.approx(1.3, abs=1e-6)
    assert res.theta_md["b"] == pytest.approx(-0.7, abs=1e-6)


def test_trace_non_increasing_per_start():
    cfg = EstimationConfig(free={"a": (-5.0, 5.0), "b": (-5.0, 5.0)}, restarts=4)
    res = minimize(None, cfg, fn=lambda t: (t["a"] - 1.0) ** 2 + abs(t["b"]) + t["a"] * t["b"] / 4)
    for start in range(4):
        fs = [f for s, _, f in res.trace if s == start]
        assert len(fs) > 1
        assert all(b <= a for a, b in zip(fs, fs[1:]))


def test_bounds_respected():
    cfg = EstimationConfig(free={"a": (0.0, 1.0)}, restarts=2)
    res = minimize(None, cfg, fn=lambda t: (t["a"] - 3.0) ** 2)
    assert res.theta_md["a"] == pytest.approx(1.0, abs=1e-8)


def test_no_finite_start():
    cfg = EstimationConfig(free={"a": (0.0, 1.0)}, restarts=2, max_evals=20)
    with pytest.raises(NoImprovement):
        minimize(None, cfg, fn=lambda t: math.inf)


def test_flat_objective_is_flagged():
    cfg = EstimationConfig(free={"a": (0.0, 1.0)}, restarts=2, max_evals=20)
    assert minimize(None, cfg, fn=lambda t: 1.0).no_improvement


def test_recovery_single_start(desk_data):
    cfg = EstimationConfig(free=FREE, start={"h": 0.4, "p_b": 0.7, "p_s": 0.7}, restarts=1)
    res = minimize(desk_data, cfg)
    for k, v in TRUTH.items():
        assert res.theta_md[k] == pytest.approx(v, abs=1e-3)
    assert res.ell_model == desk_data.ell_data


def test_deterministic(desk_data):
    cfg = EstimationConfig(free=FREE, restarts=2, max_evals=150, seed=3)
    a, b = minimize(desk_data, cfg), minimize(desk_data, cfg)
    assert a.theta_md == b.theta_md and a.trace == b.trace


# ---------------------------------------------------------------- files

def test_round_trip(tmp_path, desk_data):
    export_csv(desk_data, tmp_path / "d.csv")
    back = ingest_csv(tmp_path / "d.csv", desk_data.ell_data)
    assert back == desk_data


def test_single_row(tmp_path):
    (tmp_path / "d.csv").write_text("variable,horizon,value,weight\nc,0,-0.01,1\n")
    data = ingest_csv(tmp_path / "d.csv")
    assert data.rows == (DataRow("c", 0, -0.01, 1.0),)


def test_header_only(tmp_path):
    (tmp_path / "d.csv").write_text("variable,horizon,value,weight\n")
    with pytest.raises(ConfigError, match="no data rows"):
        ingest_csv(tmp_path / "d.csv")


def test_parse_errors(tmp_path):
    (tmp_path / "d.csv").write_text("variable,horizon,value,weight\nc,0,-0.01,1\nc,one,0.0,1\n")
    with pytest.raises(ParseError) as exc:
        ingest_csv(tmp_path / "d.csv")
    assert exc.value.line == 3
    (tmp_path / "e.csv").write_text("variable,horizon,value\nc,0,-0.01\n")
    with pytest.raises(MissingColumn):
        ingest_csv(tmp_path / "e.csv")
    with pytest.raises(ConfigError):
        ingest_csv(tmp_path / "missing.csv")


def test_result_csv(tmp_path):
    cfg = EstimationConfig(free={"a": (-1.0, 1.0)}, restarts=1)
    res = minimize(None, cfg, fn=lambda t: t["a"] ** 2)
    write_result_csv(res, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "parameter,value" and lines[1].startswith("a,")
