"""Command-line entry point: parse a run config, dispatch solvers and
checkers, and emit deterministic CSV/JSON reports.

Exit codes: 0 all checks pass, 1 at least one inequality violated beyond
tolerance, 2 configuration or validation error. Outputs are a pure function
of (config bytes, seed); the --threads flag only parallelizes independent
checks and must not change any byte of the output.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

from . import coupling as cpl
from . import harnack as hk
from . import scenario as sc
from .config import ConfigError, RunConfig, parse_run_config
from .gheat import _UNIT_COEFFS, PdeError, solve_g_heat, solve_with_tolerance
from .model import ModelError, default_state_domain, validate_coefficients
from .scenario import ScenarioError
from .coupling import CouplingError
from .harnack import HarnackError

_SWEEP_FRACTIONS = (0.2, 0.1, 0.05, 0.025)
_EXPORT_PATHS = 128


def _parallel_map(fn, items, threads: int):
    items = list(items)
    if threads == 0:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _estimate_rows(rows) -> str:
    out = ["quantity,value,std_error,n_paths,n_controls,best_control_id"]
    for name, est in rows:
        out.append(f"{name},{est.value!r},{est.std_error!r},{est.n_paths},"
                   f"{est.n_controls},{est.best_control_id}")
    return "\n".join(out) + "\n"


def _controls_for(cfg: RunConfig, policy=None):
    return sc.sample_controls(cfg.strategy, cfg.band, cfg.grid, cfg.n_controls,
                              cfg.seed, policy=policy)


def _validate_model(cfg: RunConfig):
    domain = default_state_domain(cfg.check_x, cfg.band, cfg.coeffs,
                                  cfg.grid.horizon)
    report = validate_coefficients(cfg.coeffs, domain, cfg.grid)
    if not report.passed:
        raise ModelError("; ".join(report.violations))
    return report


def run_gheat(cfg: RunConfig, threads: int):
    u, tol = solve_with_tolerance(_UNIT_COEFFS, cfg.band, cfg.payoff,
                                  cfg.grid.horizon, cfg.pde)
    entry = {"kind": "gheat", "payoff": cfg.payoff.name, "x": cfg.check_x,
             "value": float(u(cfg.check_x)), "tolerance": tol(cfg.check_x)}
    return [entry], {"grid_u": u}, []


def run_semigroup(cfg: RunConfig, threads: int):
    _validate_model(cfg)
    u, tol = solve_with_tolerance(cfg.coeffs, cfg.band, cfg.payoff,
                                  cfg.grid.horizon, cfg.pde)
    entries = [
        {"kind": "semigroup", "payoff": cfg.payoff.name, "x": pt,
         "value": float(u(pt)), "tolerance": tol(pt)}
        for pt in (cfg.check_x, cfg.check_y)
    ]
    return entries, {"grid_u": u}, []


def run_scenario(cfg: RunConfig, threads: int):
    """Sup-over-controls MC against the PDE oracle, plus Young trials."""
    T = cfg.grid.horizon
    u, tol = solve_with_tolerance(_UNIT_COEFFS, cfg.band, cfg.payoff, T, cfg.pde)
    pde_value = float(u(0.0))
    pde_tol = tol(0.0)
    _, policy = solve_g_heat(cfg.payoff, cfg.band, T, cfg.pde,
                             policy_times=cfg.grid.nodes[:-1])
    controls = sc.sample_controls("feedback", cfg.band, cfg.grid,
                                  cfg.n_controls, cfg.seed, policy=policy)
    est = sc.upper_expectation_mc(sc.terminal_functional(cfg.payoff), controls,
                                  cfg.n_paths, cfg.seed)
    band_width = 3.0 * est.std_error + pde_tol
    entry = {
        "kind": "scenario_oracle", "payoff": cfg.payoff.name,
        "mc_value": est.value, "std_error": est.std_error,
        "pde_value": pde_value, "pde_tolerance": pde_tol,
        "passed": est.value <= pde_value + band_width,
    }

    worst = math.inf
    for trial in range(200):
        P, g1, g2 = sc.random_young_trial(cfg.seed + trial)
        worst = min(worst, sc.young_check(P, g1, g2).slack)
    young_entry = {"kind": "young", "trials": 200, "worst_slack": worst,
                   "passed": worst >= -1e-12}
    return [entry, young_entry], {}, [("upper_expectation", est)]


def run_coupling(cfg: RunConfig, threads: int):
    _validate_model(cfg)
    T = cfg.grid.horizon
    schedule = cpl.make_schedule(cfg.alpha, cfg.coeffs, cfg.band, T)
    controls = _controls_for(cfg)
    x0, y0 = cfg.check_x, cfg.check_y

    entropy = cpl.entropy_bound_check(cfg.coeffs, schedule, x0, y0, controls,
                                      cfg.n_paths, cfg.seed, cfg.clip_epsilon)
    entries = [{"kind": "entropy", **_slack_dict(entropy)}]
    if cfg.coeffs.kappa2 > cfg.coeffs.kappa1:
        moment = cpl.moment_bound_check(cfg.coeffs, schedule, x0, y0, controls,
                                        cfg.n_paths, cfg.seed, cfg.clip_epsilon)
        entries.append({"kind": "moment", **_slack_dict(moment)})

    def sweep_bundles():
        for frac in _SWEEP_FRACTIONS:
            for control in controls:
                yield cpl.simulate_coupled(cfg.coeffs, schedule, x0, y0,
                                           control, cfg.seed, frac * T,
                                           n_paths=cfg.n_paths)

    trend = cpl.coupling_success_check(sweep_bundles())
    entries.append({
        "kind": "coupling_trend", "fitted_C": trend.fitted_C,
        "theory_C": trend.theory_C,
        "strictly_decreasing": trend.strictly_decreasing,
        "bounded": trend.bounded, "passed": trend.passed,
        "rows": [dataclasses.asdict(r) for r in trend.rows],
    })

    export = [
        cpl.simulate_coupled(cfg.coeffs, schedule, x0, y0, control, cfg.seed,
                             cfg.clip_epsilon,
                             n_paths=min(cfg.n_paths, _EXPORT_PATHS))
        for control in controls
    ]
    qv_pass = all(cpl.girsanov_shifted_qv_check(b) for b in export)
    entries.append({"kind": "shifted_qv", "passed": qv_pass,
                    "discrepancy": max(cpl.shifted_qv_discrepancy(b)
                                       for b in export),
                    "tolerance": 10.0 * cfg.grid.dt * T})
    return entries, {"paths": export}, []


def _slack_dict(report) -> dict:
    d = vars(report).copy()
    d.pop("kind", None)
    return d


def run_harnack(cfg: RunConfig, threads: int):
    _validate_model(cfg)
    T = cfg.grid.horizon
    jobs = [lambda: hk.check_log_harnack(cfg.coeffs, cfg.band, cfg.payoff,
                                         cfg.check_x, cfg.check_y, T, cfg.pde)]
    if cfg.coeffs.kappa2 > cfg.coeffs.kappa1:
        jobs.append(lambda: hk.check_power_harnack(
            cfg.coeffs, cfg.band, cfg.payoff, cfg.check_x, cfg.check_y, T,
            cfg.check_p, cfg.pde))
    jobs.append(lambda: hk.lipschitz_transport_check(
        cfg.coeffs, cfg.band, cfg.payoff, cfg.check_x, cfg.check_y, T, cfg.pde))
    reports = _parallel_map(lambda job: job(), jobs, threads)
    return [r.to_dict() for r in reports], {"harnack_rows": reports}, []


def run_gradient(cfg: RunConfig, threads: int):
    _validate_model(cfg)
    grid_alpha = hk.make_alpha_grid(cfg.coeffs, cfg.alpha_grid_size)
    report = hk.check_gradient_estimate(cfg.coeffs, cfg.band, cfg.payoff,
                                        cfg.grid.horizon, cfg.pde, grid_alpha)
    return [report.to_dict()], {"harnack_rows": [report]}, []


def run_suite(cfg: RunConfig, threads: int):
    entries = []
    artifacts = {}
    estimates = []
    runners = (run_semigroup, run_scenario, run_coupling, run_harnack,
               run_gradient)
    results = _parallel_map(lambda r: r(cfg, 1), runners, threads)
    for sub_entries, sub_art, sub_est in results:
        entries.extend(sub_entries)
        rows = sub_art.pop("harnack_rows", None)
        if rows:
            artifacts.setdefault("harnack_rows", []).extend(rows)
        artifacts.update(sub_art)
        estimates.extend(sub_est)
    return entries, artifacts, estimates


_RUNNERS = {
    "gheat": run_gheat,
    "semigroup": run_semigroup,
    "scenario": run_scenario,
    "coupling": run_coupling,
    "harnack": run_harnack,
    "gradient": run_gradient,
    "suite": run_suite,
}


def bundled_config_path() -> Path:
    return Path(resources.files("gharnack").joinpath("data/acceptance.cfg"))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gharnack",
        description="Numerical laboratory for sublinear expectations: "
                    "semigroup solvers, scenario Monte Carlo, coupling "
                    "checks, and Harnack-inequality certificates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="run configuration (defaults to the bundled "
                            "acceptance config)")
        p.add_argument("--out", type=str, default="out",
                       help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=0,
                       help="0 = auto; never changes results")
    args = parser.parse_args(argv)

    config_path = args.config or bundled_config_path()
    try:
        cfg = parse_run_config(config_path, seed_override=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: cannot read {config_path}: {exc}", file=sys.stderr)
        return 2

    try:
        entries, artifacts, estimates = _RUNNERS[args.command](cfg, args.threads)
    except (ModelError, PdeError, ScenarioError, CouplingError, HarnackError,
            ConfigError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "report.json",
                  json.dumps(entries, indent=2, sort_keys=True) + "\n")
    if estimates:
        _atomic_write(out / "estimates.csv", _estimate_rows(estimates))
    if "grid_u" in artifacts:
        artifacts["grid_u"].to_csv(out / "grid_u.csv")
    if "paths" in artifacts:
        cpl.export_bundle_csv(artifacts["paths"], out / "paths.csv")
    if "harnack_rows" in artifacts:
        rows = [hk.CSV_HEADER]
        rows.extend(r.csv_row() for r in artifacts["harnack_rows"])
        _atomic_write(out / "reports.csv", "\n".join(rows) + "\n")

    failed = [e for e in entries if e.get("passed") is False]
    for e in entries:
        status = {True: "pass", False: "FAIL", None: "info"}[e.get("passed")]
        print(f"{e['kind']}: {status}")
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
