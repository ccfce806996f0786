"""Command line entry point: ``hems-relax <command> ...``.

Exit codes: 0 all certified, 2 a house/point failed certification although
the efficiency condition holds, 3 I/O, parse or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, batch, config, oracle, profiles

EXIT_OK, EXIT_UNCERTIFIED, EXIT_INPUT = 0, 2, 3

log = logging.getLogger("hems_relax")


def _scenario(args):
    cfg = config.load_config(args.scenario)
    source = getattr(args, "profiles", None) or cfg.profiles
    if source is None:
        raise config.ConfigError("no profiles given (--profiles or [data] profiles)")
    table = profiles.load_profiles(source, cfg.K)
    return cfg, cfg.scenario(table)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def cmd_solve(args) -> int:
    cfg, s = _scenario(args)
    out = batch.solve_scenario(s, eps_c=args.eps_c)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {"status": out.status, "message": out.message, "currency": cfg.currency}
    if out.solution is not None:
        batch.write_schedule(out.solution, outdir / "schedule.csv")
        summary.update(objective=out.solution.objective, bill=out.solution.bill,
                       reg_cost=out.solution.reg_cost, iterations=out.result.iterations,
                       certificate=out.certificate.summary())
    (outdir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    print(json.dumps(_jsonable(summary), indent=2))
    if out.certificate is None:
        return EXIT_INPUT if out.status == "Invalid" else EXIT_UNCERTIFIED
    return _certificate_exit(out.certificate)


def _certificate_exit(cert: analysis.CertificateReport) -> int:
    if cert.passed:
        return EXIT_OK
    holds = cert.condition.holds if cert.condition is not None else True
    return EXIT_UNCERTIFIED if holds else EXIT_OK


def cmd_certify(args) -> int:
    _, s = _scenario(args)
    sol = batch.read_schedule(args.solution, s)
    try:
        cert = analysis.certify_schedule(s, sol, eps_c=args.eps_c)
    except analysis.CertificateRefused as exc:
        print(f"not certified: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    print(json.dumps(_jsonable(cert.summary()), indent=2))
    return _certificate_exit(cert)


def cmd_oracle(args) -> int:
    _, s = _scenario(args)
    exact = oracle.solve_exact(s, k_limit=args.k_limit)
    relaxed = batch.solve_scenario(s, eps_c=args.eps_c)
    summary = {"patterns": len(exact.all),
               "feasible_patterns": sum(r.feasible for r in exact.all),
               "relaxed_status": relaxed.status}
    if exact.best is not None:
        summary.update(best_pattern=exact.best.pattern, exact_objective=exact.best.objective)
        if relaxed.solution is not None:
            gap = oracle.compare(s, relaxed.solution, exact.best)
            summary.update(relaxed_objective=gap.relaxed, gap=gap.gap)
    print(json.dumps(_jsonable(summary), indent=2))
    return EXIT_OK


def cmd_batch(args) -> int:
    cfg = config.load_config(args.scenario)
    tables = profiles.load_profile_dir(args.profiles_dir, cfg.K)
    report = batch.run_batch(tables, cfg.battery, cfg.reg, args.out, config=cfg,
                             eps_c=args.eps_c, jobs=args.jobs, timings=args.timings)
    steps = sum(t.K for t in tables)
    print(f"houses: {len(report.rows)}  certified: {report.certified}/{len(report.rows)}  "
          f"simultaneous steps: {report.simultaneous_steps}/{steps}  "
          f"max margin: {report.max_margin:.3g} kW")
    return report.exit_code


def cmd_synth(args) -> int:
    paths = profiles.write_houses(profiles.synth_houses(args.seed, args.houses, args.k), args.out)
    print(f"wrote {len(paths)} profiles to {args.out}")
    return EXIT_OK


def parse_eta_grid(text: str) -> list[tuple[float, float]]:
    """``"0.9:0.9,1:1"`` -> ``[(0.9, 0.9), (1.0, 1.0)]``."""
    grid = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            a, b = item.split(":")
            grid.append((float(a), float(b)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad eta pair {item!r}; use eta_ch:eta_dch") from None
    if not grid:
        raise argparse.ArgumentTypeError("empty eta grid")
    return grid


def cmd_sweep(args) -> int:
    _, s = _scenario(args)
    report = batch.sweep_condition(s, args.eta_grid, args.out, eps_c=args.eps_c)
    for r in report.rows:
        print(f"eta_ch={r.eta_ch:g} eta_dch={r.eta_dch:g} product={r.product:g} "
              f"m_max={r.m_max:.3g} holds={r.theorem_holds} status={r.status}")
    return EXIT_UNCERTIFIED if report.violations else EXIT_OK


def cmd_convert(args) -> int:
    paths = profiles.convert_ausgrid(args.input, args.out)
    print(f"wrote {len(paths)} profiles to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hems-relax", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, profiles_opt=True):
        p.add_argument("--scenario", required=True, help="scenario config (INI)")
        if profiles_opt:
            p.add_argument("--profiles", help="profile CSV (overrides [data] profiles)")
        p.add_argument("--eps-c", type=float, default=None, dest="eps_c",
                       help="complementarity tolerance in kW")

    p = sub.add_parser("solve", help="solve and certify one house")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("certify", help="certify a schedule CSV")
    common(p)
    p.add_argument("--solution", required=True)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("oracle", help="compare with the pattern-enumeration optimum")
    common(p)
    p.add_argument("--k-limit", type=int, default=oracle.K_LIMIT, dest="k_limit")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("batch", help="solve and certify a directory of houses")
    common(p, profiles_opt=False)
    p.add_argument("--profiles-dir", required=True, dest="profiles_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timings", action="store_true", help="add wall_time_ms column")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("synth", help="generate synthetic house profiles")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--houses", type=int, required=True)
    p.add_argument("--k", type=int, default=24)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="sweep charge/discharge efficiencies")
    common(p)
    p.add_argument("--eta-grid", required=True, type=parse_eta_grid, dest="eta_grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("convert-ausgrid", help="convert AUSGRID half-hourly data")
    p.add_argument("--in", required=True, dest="input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        # ScenarioError, ProfileError, ConfigError and CertificateRefused are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
