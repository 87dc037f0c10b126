"""Command-line surface: simulate / check / estimate / evaluate / mc.

Exit codes: 0 success, 1 usage or configuration error, 2 separation
violation, 3 assumption gate failure (A0-A3), 4 non-convergence.
Set SUBNETMLE_LOG=DEBUG|INFO|WARNING to control verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import workflows as wf
from .config import ExperimentConfig, load_config
from .dataio import (
    read_estimate_csv,
    read_signals_csv,
    write_estimate_csv,
    write_signals_csv,
    write_table,
)
from .errors import ConfigError, SeparationError, SubnetmleError
from .estimator import assumption_report
from .network import check_separation, validate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SEPARATION = 2
EXIT_ASSUMPTION = 3
EXIT_NOT_CONVERGED = 4

log = logging.getLogger("subnetmle")


def _meta(config: ExperimentConfig, seeds: dict) -> dict:
    return {"config_sha256": config.sha256, "config_name": config.name, "seeds": seeds}


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config.seeds["estimation"] = int(args.seed)
    return config


def cmd_simulate(args) -> int:
    config = _load(args)
    signals, seeds = wf.generate_signals(config, config.seeds["estimation"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "signals.csv"
    write_signals_csv(target, signals, _meta(config, seeds),
                      export_noise=config.export_noise)
    log.info("wrote %s", target)
    print(f"simulated {config.samples} samples of {config.network.topology.m} systems "
          f"-> {target}")
    return EXIT_OK


def _print_matrix(name: str, mat: np.ndarray) -> None:
    rows = [" ".join(f"{v:+.0f}" for v in row) for row in np.atleast_2d(mat)]
    print(f"{name} =")
    for row in rows:
        print(f"  [{row}]")


def cmd_check(args) -> int:
    config = _load(args)
    validate(config.network.topology)
    violations = check_separation(config.network.topology, config.partition)
    if violations:
        print("separation: VIOLATED")
        for src, dst in violations:
            print(f"  offending edge {src} -> {dst}")
        return EXIT_SEPARATION
    print("separation: ok")
    eq = wf.build_equivalent(config)
    print(f"ml_mode: {eq.ml_mode}")
    _print_matrix("upsilon_bar_a", eq.upsilon_bar_a)
    _print_matrix("omega_tilde_a", eq.omega_tilde_a)
    channels = ", ".join(f"{k}{i}" for k, i in eq.r_channels)
    print(f"augmented input channels: ({channels})")

    selector = wf.build_selector(config, getattr(args, "observed", None))
    signals, _ = wf.generate_signals(config, config.seeds["estimation"])
    from .likelihood import estimation_data_from_signals

    data = estimation_data_from_signals(signals, eq, selector)
    report_net = assumption_report(config.network.systems, config.network.topology.upsilon)
    sub_systems = [config.network.systems[i - 1] for i in config.partition.set_a]
    report_sub = assumption_report(sub_systems, eq.upsilon_bar_a,
                                   selector=selector, r_tilde=data.r_tilde)
    print(f"A0 stable network: {report_net.a0_stable} "
          f"(spectral radius {report_net.spectral_radius:.6f})")
    print(f"A1 no pole-zero cancellation: {report_net.a1_no_cancellation} "
          f"(min root distance {report_net.min_root_distance:.3g})")
    print(f"A2 observed-selection rank: {report_sub.a2_rank_ok} "
          f"(rank {report_sub.a2_rank} of {len(selector.observed)})")
    print(f"A3 noise zeros off unit circle: {report_net.a3_c_roots_ok} "
          f"(min gap {report_net.min_c_root_gap:.3g})")
    a4 = report_sub.a4_excitation
    print("A4 excitation (advisory): min periodogram eigenvalue "
          + (f"{a4:.3g}" if a4 is not None else "n/a (no known inputs)"))
    print(f"A5 identifiability: {report_sub.a5_identifiability}")
    gates = (report_net.a0_stable and report_net.a1_no_cancellation
             and report_net.a3_c_roots_ok and report_sub.a2_rank_ok is not False)
    return EXIT_OK if gates else EXIT_ASSUMPTION


def cmd_estimate(args) -> int:
    config = _load(args)
    if args.data:
        signals, _ = read_signals_csv(args.data)
        seeds = {"estimation": config.seeds["estimation"]}
    else:
        signals, seeds = wf.generate_signals(config, config.seeds["estimation"])
    observed = args.observed.split(",") if args.observed else None
    result = wf.run_estimate(config, signals, observed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "estimate.csv"
    write_estimate_csv(target, result, config.partition.set_a, _meta(config, seeds))
    print(f"ml_mode: {result.ml_mode}")
    for trace in result.stage_trace:
        print(f"stage {trace.stage}: nll={trace.nll:.6f} "
              f"iterations={trace.iterations} ({trace.reason})")
    print(f"final nll: {result.nll:.6f} converged: {result.converged}")
    print(f"wrote {target}")
    if not result.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load(args)
    theta_hat, _lam = read_estimate_csv(args.estimate)
    validation_signals = None
    if args.validation:
        validation_signals, _ = read_signals_csv(args.validation)
    fits = wf.validation_fits(config, theta_hat, validation_signals)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "fits.csv"
    rows = [[name, float(value)] for name, value in fits.items()]
    write_table(target, ["signal", "fit_x100"], rows,
                _meta(config, {"validation": config.seeds.get("validation", "derived")}))
    for name, value in fits.items():
        print(f"fit({name}) x100 = {value:.2f}")
    print(f"wrote {target}")
    return EXIT_OK


def cmd_mc(args) -> int:
    config = _load(args)
    observed = args.observed.split(",") if args.observed else None
    report = wf.monte_carlo_study(config, runs=args.runs, jobs=args.jobs,
                                  observed=observed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(config, {"monte_carlo_base": config.seeds.get("monte_carlo_base")})
    summary = out / "mc_report.csv"
    rows = [
        ["runs_used", float(report.run_count)],
        ["excluded", float(report.excluded_count)],
        ["flagged", float(report.flagged)],
        ["bias_norm", float(report.bias_norm if report.bias_norm is not None else np.nan)],
        ["cov_trace", float(report.cov_trace if report.cov_trace is not None else np.nan)],
        ["cov_max_eig", float(report.cov_max_eig if report.cov_max_eig is not None else np.nan)],
    ]
    write_table(summary, ["metric", "value"], rows, meta)
    runs_file = out / "mc_runs.csv"
    run_rows = [[k] + [float(v) for v in theta] for k, theta in enumerate(report.theta_runs)]
    header = ["run"] + [f"p{j}" for j in range(len(report.theta_runs[0]))]
    write_table(runs_file, header, run_rows, meta)
    print(f"monte carlo: {report.run_count} runs used, {report.excluded_count} excluded"
          + (" [flagged: >20% excluded]" if report.flagged else ""))
    print(f"bias_norm={report.bias_norm:.4f} cov_trace={report.cov_trace:.4f} "
          f"cov_max_eig={report.cov_max_eig:.4f}")
    print(f"wrote {summary} and {runs_file}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subnetmle",
        description="Sub-network maximum-likelihood identification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment configuration JSON")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="estimation seed override")
        p.add_argument("--observed", default=None,
                       help="comma-separated observed channel override, e.g. y1,y3")

    p_sim = sub.add_parser("simulate", help="simulate the full network to CSV")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_check = sub.add_parser("check", help="separation and assumption report")
    common(p_check)
    p_check.set_defaults(func=cmd_check)

    p_est = sub.add_parser("estimate", help="run the three-stage estimator")
    common(p_est)
    p_est.add_argument("--data", default=None, help="signals CSV (default: simulate)")
    p_est.set_defaults(func=cmd_estimate)

    p_eval = sub.add_parser("evaluate", help="validation fit table for an estimate")
    common(p_eval)
    p_eval.add_argument("--estimate", required=True, help="estimate CSV")
    p_eval.add_argument("--validation", default=None,
                        help="validation signals CSV (default: simulate)")
    p_eval.set_defaults(func=cmd_evaluate)

    p_mc = sub.add_parser("mc", help="Monte Carlo bias/covariance study")
    common(p_mc)
    p_mc.add_argument("--runs", type=int, default=None, help="number of runs")
    p_mc.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p_mc.set_defaults(func=cmd_mc)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SUBNETMLE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except SeparationError as exc:
        print(f"separation violated: {exc}", file=sys.stderr)
        return EXIT_SEPARATION
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SubnetmleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
