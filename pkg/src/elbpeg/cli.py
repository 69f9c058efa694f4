"""Command-line front end: YAML config in, CSV tables out.

Exit codes: 0 success, 1 configuration or user error, 2 solver error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import yaml

from . import arna, chain, estimate, multiplier, nkhabits
from .errors import ConfigError, ElbPegError, SolverError
from .model import ModelSpec, load_model, model_from_dict
from .qme import write_eigenvalues_csv

COMMANDS = ("solve", "multipliers", "stability", "asad", "estimate", "compare", "simulate-chain")


# ---------------------------------------------------------------- config

def read_config(path: str | Path | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path} does not hold a mapping")
    return cfg, path.resolve().parent


def _habits(cfg: dict) -> nkhabits.HabitsParams:
    block = cfg.get("habits") or {}
    try:
        return nkhabits.HabitsParams(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid habits block: {exc}") from exc


def model_from_config(cfg: dict, base: Path) -> ModelSpec:
    """``model`` (file path or inline mapping) or else the habits model."""
    spec = cfg.get("model")
    if spec is None:
        return nkhabits.build_model(_habits(cfg))
    if isinstance(spec, dict):
        return model_from_dict(spec)
    return load_model(base / spec)


def _float(cfg: dict, key: str, default: float) -> float:
    try:
        return float(cfg.get(key, default))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} must be a number") from exc


def _int(cfg: dict, key: str, default: int | None) -> int | None:
    v = cfg.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or int(v) != v:
        raise ConfigError(f"{key} must be an integer")
    return int(v)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------- commands

def _zero_solution_tables(model: ModelSpec, out: Path, horizon: int) -> list[Path]:
    names = list(model.variable_names) + [model.x_name, "w_b", "w_s"]
    if model.policy_rule is not None or model.rate_index is not None:
        names.append("r")
    files = [out / "states.csv", out / "paths.csv", out / "residuals.csv"]
    _write_rows(files[0], ["variable", "state_index", "value"], [[v, 1, _fmt(0.0)] for v in names])
    _write_rows(files[1], ["variable", "n", "value"],
                [[v, n, _fmt(0.0)] for v in names for n in range(horizon + 1)])
    _write_rows(files[2], ["block", "max_abs"],
                [[b, _fmt(0.0)] for b in ("forward", "backward", "w_b", "w_s")])
    return files


def run_solve(cfg: dict, base: Path, out: Path, seed: int) -> list[Path]:
    model = model_from_config(cfg, base)
    w_b0, w_s0 = _float(cfg, "w_b0", 0.0), _float(cfg, "w_s0", 0.0)
    horizon = _int(cfg, "horizon", 40)
    ell = _int(cfg, "ell", None)
    peg = cfg.get("peg", "peg")
    if peg not in ("peg", "taylor", "elb_forever"):
        raise ConfigError("peg must be one of peg, taylor, elb_forever")
    if ell is None and w_b0 == 0.0 and w_s0 == 0.0 and peg != "elb_forever":
        # without shocks the bound never binds: steady state throughout
        print("ell = 0 (no shock)")
        return _zero_solution_tables(model, out, horizon)
    if ell is None and peg != "elb_forever":
        sol = chain.find_duration(model, w_b0, w_s0, ell_max=_int(cfg, "ell_max", 40), peg=peg,
                                  check_scenario=bool(cfg.get("check_scenario", True)))
    else:
        sol = chain.assemble_states(model, ell or 0, w_b0, w_s0, peg=peg,
                                    verify=bool(cfg.get("verify", True)),
                                    rate_zero=bool(cfg.get("qstar_rate_zero", False)))
    files = [out / "states.csv", out / "paths.csv", out / "residuals.csv"]
    chain.write_states_csv(sol, files[0])
    chain.write_paths_csv(sol, horizon, files[1])
    res = chain.equilibrium_residuals(sol, model, horizon)
    _write_rows(files[2], ["block", "max_abs"], [[k, _fmt(v)] for k, v in res.items()])
    print(f"ell = {sol.ell}; max residual = {max(res.values()):.3e}")
    return files


def _arna_sequence(model: ModelSpec, length: int):
    """AR-NA multipliers in float64 and the index where divergence is flagged."""
    seq = multiplier.multiplier_sequence(model, length, "arna", dps=None)
    return seq, multiplier.detect_divergence(seq.values)


def run_multipliers(cfg: dict, base: Path, out: Path, seed: int) -> list[Path]:
    model = model_from_config(cfg, base)
    length = _int(cfg, "length", 200)
    if length < 1:
        raise ConfigError("length must be at least 1")
    report = multiplier.limit_multiplier(model)
    peg = multiplier.multiplier_sequence(model, length, "peg")
    with np.errstate(over="ignore", invalid="ignore"):
        ar, diverged = _arna_sequence(model, length)
    files = [out / "multipliers.csv", out / "stability.csv"]
    multiplier.write_multipliers_csv([peg, ar], model.variable_names, files[0])
    _stability_table(model, report, files[1], diverged)
    print(f"{report.classification}; p_D = {report.p_threshold:.10g}; "
          f"arna divergent at ell = {diverged + 1 if diverged is not None else 'none'}")
    return files


def _stability_table(model, report, path: Path, diverged=None) -> None:
    rows = [
        ["classification", report.classification],
        ["rho_psx", _fmt(report.rho_psx)],
        ["p_threshold", _fmt(report.p_threshold)],
    ]
    rows += [[f"limit_{name}", _fmt(v)] for name, v in zip(model.variable_names, report.limit)]
    if diverged is not None:
        rows.append(["arna_divergent_ell", diverged + 1])
    _write_rows(path, ["quantity", "value"], rows)


def run_stability(cfg: dict, base: Path, out: Path, seed: int) -> list[Path]:
    model = model_from_config(cfg, base)
    report = multiplier.limit_multiplier(model, raise_on_boundary=bool(cfg.get("raise_on_boundary", False)))
    files = [out / "stability.csv", out / "eigenvalues.csv"]
    _stability_table(model, report, files[0])
    write_eigenvalues_csv(report.solvents, files[1])
    print(f"{report.classification}; rho(p_s X) = {report.rho_psx:.10g}")
    return files


def run_asad(cfg: dict, base: Path, out: Path, seed: int) -> list[Path]:
    p = _habits(cfg)
    mode = cfg.get("mode", "ell1")
    if mode not in ("ell1", "ell_inf"):
        raise ConfigError("mode must be ell1 or ell_inf")
    lines = nkhabits.asad_lines(p, s_xi1=_float(cfg, "s_xi1", 0.0), s_g1=_float(cfg, "s_g1", 0.0),
                                mode=mode, rate_zero=bool(cfg.get("qstar_rate_zero", False)))
    rows = [
        ["ad_slope", _fmt(lines.ad_slope)], ["ad_intercept", _fmt(lines.ad_intercept)],
        ["as_slope", _fmt(lines.as_slope)], ["as_intercept", _fmt(lines.as_intercept)],
        ["as_g_shift", _fmt(lines.as_g_shift)], ["as_xi_shift", _fmt(lines.as_xi_shift)],
        ["q", _fmt(lines.q_used)],
    ]
    if cfg.get("thresholds", True):
        rows += [
            ["p_bar", _fmt(nkhabits.threshold_pbar(p))],
            ["p_deflation", _fmt(nkhabits.p_deflation(p))],
            ["p_mccf", _fmt(nkhabits.mccf_threshold(p))],
        ]
    files = [out / "asad.csv"]
    _write_rows(files[0], ["quantity", "value"], rows)
    print(f"AD slope {lines.ad_slope:.6g}, AS slope {lines.as_slope:.6g}")
    return files


def _estimation_config(cfg: dict, seed: int) -> estimate.EstimationConfig:
    free = cfg.get("free")
    if not isinstance(free, dict) or not free:
        raise ConfigError("estimate needs a free block of name: [lower, upper]")
    try:
        bounds = {k: (float(v[0]), float(v[1])) for k, v in free.items()}
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"invalid bounds: {exc}") from exc
    return estimate.EstimationConfig(
        free=bounds,
        fixed=dict(cfg.get("fixed") or {}),
        start=dict(cfg.get("start") or {}),
        weight_matrix=cfg.get("weight_matrix"),
        tau_e=_float(cfg, "tau_e", 1000.0),
        tau_ell=_float(cfg, "tau_ell", 1000.0),
        duration_penalty=cfg.get("duration_penalty", "squared"),
        restarts=_int(cfg, "restarts", 8),
        max_evals=_int(cfg, "max_evals", 2000),
        xatol=_float(cfg, "xatol", 1e-10),
        seed=seed,
    )


def run_estimate(cfg: dict, base: Path, out: Path, seed: int) -> list[Path]:
    if "seed" in cfg and seed is None:
        seed = _int(cfg, "seed", 0)
    config = _estimation_config(cfg, 0 if seed is None else seed)
    if "data" in cfg:
        data = estimate.ingest_csv(base / cfg["data"], _int(cfg, "ell_data", None))
    elif "synthetic" in cfg:
        syn = cfg["synthetic"]
        data = estimate.synthetic_data(dict(syn.get("theta", {})), tuple(syn.get("variables", ("c", "pi", "r"))),
                                       int(syn.get("horizon", 12)))
        if "ell_data" in cfg:
            data = estimate.ExpectationsData(data.rows, _int(cfg, "ell_data", None))
    else:
        raise ConfigError("estimate needs either data (CSV path) or synthetic")
    for name in config.free:
        if name not in nkhabits.HabitsParams.__dataclass_fields__ and name not in ("xi0", "g0"):
            raise ConfigError(f"unknown free parameter {name!r}")

    result = estimate.minimize(data, config)
    files = [out / "estimate.csv", out / "fit.csv"]
    estimate.write_result_csv(result, files[0])
    theta = {**config.fixed, **result.theta_md}
    params, xi0, g0 = estimate.split_theta(theta)
    paths, _ = estimate.model_expectations(params, None, data.max_horizon, xi0, g0)
    _write_rows(files[1], ["variable", "horizon", "data", "model"],
                [[r.variable, r.horizon, _fmt(r.value), _fmt(paths[r.variable][r.horizon])] for r in data.rows])
    o = result.objective
    print(f"objective = {o.total:.6e} (fit {o.fit:.6e}, euler {o.euler:.6e}, duration {o.duration:.6e}); ell = {o.ell}")
    return files


def run_compare(cfg: dict, base: Path, out: Path, seed: int) -> list[Path]:
    model = model_from_config(cfg, base)
    w_b0, w_s0 = _float(cfg, "w_b0", 0.0), _float(cfg, "w_s0", 0.0)
    horizon = _int(cfg, "horizon", 40)
    sol = chain.find_duration(model, w_b0, w_s0, check_scenario=False)
    path = arna.solve_occbin(model, w_b0, w_s0, horizon=max(200, horizon + arna.TERMINAL_BUFFER + 1))
    rows = []
    names = list(model.variable_names) + [model.x_name]
    arna_cols = [path.y[:, i] for i in range(model.n)] + [path.x]
    if "r" in sol.states:
        names.append("r")
        arna_cols.append(path.rate)
    for name, ar in zip(names, arna_cols):
        peg = chain.expected_paths(sol.spec, sol.states[name], horizon)
        rows += [[name, n, _fmt(peg[n]), _fmt(ar[n])] for n in range(horizon + 1)]
    files = [out / "compare.csv"]
    _write_rows(files[0], ["variable", "n", "peg", "arna"], rows)
    print(f"peg ell = {sol.ell}; arna ell = {path.ell_realized}")
    return files


def run_simulate_chain(cfg: dict, base: Path, out: Path, seed: int) -> list[Path]:
    model = model_from_config(cfg, base)
    w_b0, w_s0 = _float(cfg, "w_b0", 0.0), _float(cfg, "w_s0", 0.0)
    horizon = _int(cfg, "horizon", 40)
    runs = _int(cfg, "runs", 100_000)
    ell = _int(cfg, "ell", None)
    if ell is None:
        sol = chain.find_duration(model, w_b0, w_s0, check_scenario=False)
    else:
        sol = chain.assemble_states(model, ell, w_b0, w_s0)
    names = list(sol.states)
    stack = np.column_stack([sol.states[k] for k in names])
    exact = chain.expected_paths(sol.spec, stack, horizon)
    mean, se = chain.simulate_chain(sol.spec, stack, runs, horizon, seed=seed)
    ref = chain.exact_stderr(sol.spec, stack, runs, horizon)
    gap = np.abs(mean - exact)
    z = np.where(ref > 0, gap / np.where(ref > 0, ref, 1.0), np.where(gap < 1e-12, 0.0, np.inf))
    rows = [[name, n, _fmt(exact[n, j]), _fmt(mean[n, j]), _fmt(se[n, j]), _fmt(ref[n, j])]
            for j, name in enumerate(names) for n in range(horizon + 1)]
    worst = float(z.max())
    files = [out / "simulate.csv"]
    _write_rows(files[0], ["variable", "n", "exact", "mc_mean", "mc_se", "exact_se"], rows)
    print(f"ell = {sol.ell}; max |mc - exact| / exact_se = {worst:.3f}")
    return files


RUNNERS = {
    "solve": run_solve,
    "multipliers": run_multipliers,
    "stability": run_stability,
    "asad": run_asad,
    "estimate": run_estimate,
    "compare": run_compare,
    "simulate-chain": run_simulate_chain,
}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elbpeg", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    parser.add_argument("--format", choices=("csv",), default="csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, base = read_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        seed = args.seed
        if args.command != "estimate":
            seed = 0 if seed is None else seed
        if seed is not None and seed < 0:
            raise ConfigError("seed must be nonnegative")
        files = RUNNERS[args.command](cfg, base, out, seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    except ElbPegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f"wrote {f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
