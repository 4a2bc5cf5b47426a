"""Command-line entry point: ``whittaker-ew <command> --config cfg.json``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys

from .harness import (ConfigError, ExperimentConfig, SweepRow, choose_torus, delta_sweep_converges,
                      estimate_x_covariance, ibp_battery, jordan_defect, limit_spec,
                      rows_to_csv, run_validate, sweep_delta, sweep_mean, format_float)
from .drift import drift_velocity
from .rescaled_field import WrapSafetyError, ic_field
from .she_limit import z0_covariance
from .spectral_sim import RngStream, field_at_sites, init_modes, simulate_path, zero_modes

log = logging.getLogger("whittaker_ew")

MIN_COV_REPLICAS = 1000


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="whittaker-ew", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("validate", "check drift assumptions, summation by parts and Jordan bounds"),
        ("simulate", "dump field snapshots of one replica at lattice times s/delta, t/delta"),
        ("covariance", "single-point covariance estimate at the first delta"),
        ("sweep-delta", "covariance against the limit across delta_list"),
        ("sweep-mean", "mean functional against the limit across delta_list"),
        ("ibp-check", "run the summation-by-parts battery only"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output CSV path (default stdout)")
        p.add_argument("--seed", type=int, help="override mc.seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for replica blocks")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _report(checks: dict[str, bool]) -> None:
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}", file=sys.stderr)


def _cmd_validate(cfg, args) -> int:
    res = run_validate(cfg)
    _report(res.checks)
    return 0 if res.passed else 1


def _cmd_ibp(cfg, args) -> int:
    st, _ = cfg.stencil()
    w1, w2 = ibp_battery(drift_velocity(st))
    jd = jordan_defect()
    checks = {"1-D summation by parts": w1 < 1e-10, "2-D summation by parts": w2 < 1e-5,
              "Jordan bounds": jd <= 1e-12}
    _report(checks)
    print(f"max 1-D defect {w1:.3e}, max 2-D relative defect {w2:.3e}", file=sys.stderr)
    return 0 if all(checks.values()) else 1


def _cmd_simulate(cfg, args) -> int:
    delta = cfg.delta_list[0] if cfg.delta_list else 1.0
    torus = cfg.torus() or choose_torus(cfg, delta, cfg.t, with_ic=True)
    stencil, v = cfg.stencil()
    st = init_modes(ic_field(cfg.psi, delta, torus), torus) if cfg.psi else zero_modes(torus)
    times = sorted({cfg.s / delta, cfg.t / delta})
    path = simulate_path(st, times, stencil, v, RngStream(cfg.seed))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x1", "x2", "value"])
    for state in path.states:
        vals = field_at_sites(state, torus.sites)
        for (x1, x2), val in zip(torus.sites, vals):
            w.writerow([format_float(state.t), int(x1), int(x2), format_float(val)])
    _emit(buf.getvalue(), args.out)
    return 0


def _need_replicas(cfg) -> None:
    if cfg.replicas < MIN_COV_REPLICAS:
        raise ConfigError(f"covariance runs need mc.replicas >= {MIN_COV_REPLICAS}")


def _cmd_covariance(cfg, args) -> int:
    _need_replicas(cfg)
    if not cfg.delta_list:
        raise ConfigError("rescale.delta_list is empty")
    delta = cfg.delta_list[0]
    torus = cfg.torus() or choose_torus(cfg, delta, cfg.t)
    try:
        est = estimate_x_covariance(cfg, cfg.phi, cfg.phi, cfg.s, cfg.t, delta, torus,
                                    threads=args.threads)
    except WrapSafetyError as exc:
        log.error("%s", exc)
        return 1
    lim = z0_covariance(cfg.phi, cfg.phi, cfg.s, cfg.t, limit_spec(cfg), cfg.radial_n, cfg.angular_n)
    _emit(rows_to_csv([SweepRow.build(delta, torus.m, cfg.s, cfg.t, est.mean, est.stderr, lim)]),
          args.out)
    return 0


def _cmd_sweep_delta(cfg, args) -> int:
    _need_replicas(cfg)
    rows, failures = sweep_delta(cfg, threads=args.threads)
    _emit(rows_to_csv(rows), args.out)
    if rows and not delta_sweep_converges(rows):
        log.warning("abs_err does not decrease within the 2 stderr slack")
    return 1 if failures else 0


def _cmd_sweep_mean(cfg, args) -> int:
    rows, failures = sweep_mean(cfg)
    _emit(rows_to_csv(rows), args.out)
    return 1 if failures else 0


COMMANDS = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "covariance": _cmd_covariance,
    "sweep-delta": _cmd_sweep_delta,
    "sweep-mean": _cmd_sweep_mean,
    "ibp-check": _cmd_ibp,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError("threads must be >= 1")
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
