"""Command line entry point: ``cble <subcommand> [flags]``.

Global flags come before the subcommand; subcommand flags override the
matching configuration keys. Every run writes the resolved configuration next
to its artifacts so it can be replayed with ``--config``.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

import numpy as np

from . import io as cio
from .config import (ExperimentConfig, emit_config, parse_config, parse_grid,
                     with_overrides)
from .errors import (CbleError, ConfigError, DomainError, NumericalError, RegimeError,
                     StatisticalFailure, UnsupportedError)
from .fluctuation import renewal_estimate
from .levy_env import classify_regime, esscher_tilt, find_gamma
from .montecarlo import (decay_study, estimate_b, estimate_inf_asymptotic,
                         estimate_survival_direct, estimate_survival_is)
from .rng import stream
from .sde import simulate_z_batch

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_STATISTICAL = 4


def _grid(text: str):
    try:
        return parse_grid(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cble", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="experiment configuration file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("classify", help="regime label, gamma and Phi(gamma)")
    sub.add_parser("gamma", help="minimizer of the Laplace exponent on (0, 1)")

    s = sub.add_parser("survival", help="survival probability P(Z_T > 0)")
    s.add_argument("--t", type=float, dest="T")
    s.add_argument("--n", type=int)
    s.add_argument("--z", type=float)
    s.add_argument("--is", action="store_true", dest="use_is",
                   help="sample under the Esscher tilt at gamma")

    s = sub.add_parser("decay-fit", help="IS survival study and t^{-3/2} e^{Phi t} fit")
    s.add_argument("--t-grid", type=_grid)
    s.add_argument("--n", type=int)
    s.add_argument("--z", type=float)

    s = sub.add_parser("renewal", help="renewal functions of the tilted environment")
    s.add_argument("--x-grid", type=_grid)
    s.add_argument("--h", type=float)
    s.add_argument("--paths", type=int)
    s.add_argument("--t-lad", type=float)

    s = sub.add_parser("b-const", help="finite-T proxy of b(z, x)")
    s.add_argument("--x", type=float)
    s.add_argument("--t", type=float, dest="T")
    s.add_argument("--n", type=int)
    s.add_argument("--z", type=float)

    s = sub.add_parser("inf-asymp", help="decay study of P_x(inf xi > 0)")
    s.add_argument("--x", type=float)
    s.add_argument("--t-grid", type=_grid)
    s.add_argument("--n", type=int)

    s = sub.add_parser("simulate-z", help="joint (Z, xi) paths by Euler splitting")
    s.add_argument("--dt", type=float)
    s.add_argument("--paths", type=int)
    s.add_argument("--t", type=float, dest="T")
    s.add_argument("--z0", type=float)

    s = sub.add_parser("validate", help="run the acceptance suite")
    s.add_argument("--criteria", help="comma-separated criterion ids (default: all)")
    return p


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    cfg = with_overrides(cfg, "run", seed=args.seed, threads=args.threads)
    cfg = with_overrides(cfg, "output", dir=args.out)
    run = {}
    for flag, key in (("T", "T"), ("n", "n_paths"), ("z", "z"), ("x", "x"),
                      ("t_grid", "t_grid"), ("x_grid", "x_grid"), ("h", "h"),
                      ("paths", "n_paths" if args.command == "simulate-z" else "renewal_paths"),
                      ("t_lad", "T_lad"), ("dt", "dt"), ("z0", "z")):
        val = getattr(args, flag, None)
        if val is not None:
            run[key] = val
    cfg = with_overrides(cfg, "run", **run)
    if cfg.run.threads < 1 or cfg.run.n_paths < 1:
        raise ConfigError([(0, "run", "threads and n must be >= 1")])
    return cfg


def _out_path(cfg: ExperimentConfig, name: str) -> str:
    os.makedirs(cfg.output.dir, exist_ok=True)
    return os.path.join(cfg.output.dir, cfg.output.prefix + name)


def _gamma(spec, cfg: ExperimentConfig) -> float:
    return find_gamma(spec, cfg.run.root_tol)


def cmd_classify(cfg: ExperimentConfig, args) -> int:
    rep = classify_regime(cfg.env_spec(), cfg.run.eps_sign, cfg.run.root_tol)
    line = rep.label
    if rep.gamma is not None:
        line += f" gamma={rep.gamma:.10g} phi_gamma={rep.phi_gamma:.10g}"
    print(line)
    cio.write_json(_out_path(cfg, "classify.json"),
                   {"label": rep.label, "dphi0": rep.dphi0, "dphi1": rep.dphi1,
                    "gamma": rep.gamma, "phi_gamma": rep.phi_gamma})
    return EXIT_OK


def cmd_gamma(cfg: ExperimentConfig, args) -> int:
    g = find_gamma(cfg.env_spec(), cfg.run.root_tol)
    print(f"gamma={g:.10g}")
    return EXIT_OK


def cmd_survival(cfg: ExperimentConfig, args) -> int:
    r = cfg.run
    spec, mech = cfg.env_spec(), cfg.mechanism()
    if args.use_is:
        est = estimate_survival_is(mech, spec, r.z, r.T, r.n_paths, _gamma(spec, cfg), r.seed,
                                   r.max_step, r.threads)
    else:
        est = estimate_survival_direct(mech, spec, r.z, r.T, r.n_paths, r.seed, r.max_step,
                                       r.threads)
    cio.write_decay_csv(_out_path(cfg, "survival.csv"), [(r.T, est)])
    print(f"p_hat={est.mean!r} stderr={est.stderr!r} n={est.n} ess={est.ess:.6g}")
    return EXIT_OK


def cmd_decay_fit(cfg: ExperimentConfig, args) -> int:
    r = cfg.run
    spec, mech = cfg.env_spec(), cfg.mechanism()
    fit, pts = decay_study(mech, spec, r.z, r.t_grid, r.n_paths, _gamma(spec, cfg), r.seed,
                           r.max_step, r.threads, r.drift_from)
    cio.write_decay_csv(_out_path(cfg, "decay.csv"), pts)
    cio.write_json(_out_path(cfg, "decay_fit.json"),
                   {"slope": fit.slope, "slope_se": fit.slope_se, "intercept": fit.intercept,
                    "intercept_se": fit.intercept_se, "constant": fit.constant,
                    "drift": fit.drift, "chi2": fit.chi2, "weighted": fit.weighted})
    print(f"slope={fit.slope:.6g} +- {fit.slope_se:.2g} intercept={fit.intercept:.6g} "
          f"drift={fit.drift:.3g}")
    return EXIT_OK


def cmd_renewal(cfg: ExperimentConfig, args) -> int:
    r = cfg.run
    spec = cfg.env_spec()
    tilted = esscher_tilt(spec, _gamma(spec, cfg))
    ren = renewal_estimate(tilted, r.x_grid, r.h, r.T_lad, r.renewal_paths, r.seed, r.threads)
    cio.write_renewal_csv(_out_path(cfg, "renewal.csv"), ren)
    for w in ren.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"points={ren.x.size} censored_down={ren.censored_down:.3g} "
          f"censored_up={ren.censored_up:.3g} tag={ren.tag}")
    return EXIT_OK


def cmd_b_const(cfg: ExperimentConfig, args) -> int:
    r = cfg.run
    spec, mech = cfg.env_spec(), cfg.mechanism()
    est = estimate_b(mech, spec, r.z, r.x, r.T, r.n_paths, _gamma(spec, cfg), r.seed, r.max_step,
                     r.threads)
    d = est.diagnostics
    cio.write_rows(_out_path(cfg, "b_const.csv"),
                   ["z", "x", "t", "b", "stderr", "ess", "b_half", "stderr_half"],
                   [[r.z, r.x, r.T, est.mean, est.stderr, est.ess, d["half_mean"],
                     d["half_stderr"]]])
    print(f"b={est.mean!r} stderr={est.stderr!r} half_T={d['half_mean']!r} "
          f"half_z={d['half_z']:.3g}")
    return EXIT_OK


def cmd_inf_asymp(cfg: ExperimentConfig, args) -> int:
    r = cfg.run
    spec = cfg.env_spec()
    fit, pts = estimate_inf_asymptotic(spec, r.x, r.t_grid, r.n_paths, _gamma(spec, cfg), r.seed,
                                       r.max_step, r.threads, r.drift_from)
    cio.write_decay_csv(_out_path(cfg, "inf_asymp.csv"), pts)
    print(f"slope={fit.slope:.6g} +- {fit.slope_se:.2g} intercept={fit.intercept:.6g} "
          f"drift={fit.drift:.3g}")
    return EXIT_OK


def cmd_simulate_z(cfg: ExperimentConfig, args) -> int:
    r = cfg.run
    spec, mech = cfg.env_spec(), cfg.mechanism()
    res = simulate_z_batch(mech, spec, r.z, r.T, r.dt, stream(r.seed, "simulate-z"),
                           r.n_paths, keep_paths=True)
    times = np.linspace(0.0, r.T, res["m"] + 1)
    rows = []
    for i in range(r.n_paths):
        for t, z, x in zip(times, res["z_paths"][i], res["xi_paths"][i]):
            rows.append([i, float(t), float(z), float(x)])
    cio.write_rows(_out_path(cfg, "z_paths.csv"), ["path", "t", "Z", "xi"], rows)
    absorbed = int((res["absorbed"] >= 0).sum())
    print(f"paths={r.n_paths} steps={res['m']} absorbed={absorbed} "
          f"clamps={int(res['clamps'].sum())}")
    return EXIT_OK


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    from .validation import run_criteria

    ids = None
    if args.criteria:
        ids = [int(c) for c in args.criteria.split(",") if c.strip()]
    results = run_criteria(ids, cfg.run.seed, cfg.run.threads)
    report = [res.to_json() for res in results]
    cio.write_json(_out_path(cfg, "validate.json"), report)
    failed = [res.id for res in results if not res.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {failed}" if failed else ""))
    return EXIT_STATISTICAL if failed else EXIT_OK


COMMANDS = {
    "classify": cmd_classify, "gamma": cmd_gamma, "survival": cmd_survival,
    "decay-fit": cmd_decay_fit, "renewal": cmd_renewal, "b-const": cmd_b_const,
    "inf-asymp": cmd_inf_asymp, "simulate-z": cmd_simulate_z, "validate": cmd_validate,
}


def run_subcommand(name: str, cfg: ExperimentConfig, args) -> int:
    with open(_out_path(cfg, "resolved.cfg"), "w", encoding="utf-8") as fh:
        fh.write(emit_config(cfg))
    return COMMANDS[name](cfg, args)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return run_subcommand(args.command, cfg, args)
    except ConfigError as exc:
        for line, key, reason in exc.errors:
            print(f"config error: line {line}: {key}: {reason}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, RegimeError, UnsupportedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StatisticalFailure as exc:
        print(f"statistical failure: {exc}", file=sys.stderr)
        return EXIT_STATISTICAL
    except CbleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
