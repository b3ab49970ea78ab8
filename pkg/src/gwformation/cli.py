"""Command-line entry point: ``gwformation <verb> ...``.

Exit status: 0 on success, 2 when a destination is unreachable, 3 on a
numeric failure, 1 for invalid input.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import GWFormationError
from .harness import (
    ExperimentReport,
    certify_report,
    exit_code_for,
    export,
    grouping_experiment,
    load_config,
    run_experiment,
    sweep_epsilon,
)

log = logging.getLogger("gwformation")


def _eps_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("eps list is empty")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gwformation", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    def scenario(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="scenario JSON file")
        s.add_argument("--out", default=".", help="directory for report.json (default: current directory)")
        s.add_argument("--seed", type=int, help="override the scenario seed")
        s.add_argument("--tol", type=float, help="override the relaxation solve tolerance")
        s.add_argument("--max-iters", type=int, dest="max_iters", help="override the outer iteration limit")
        return s

    scenario("run", "optimize one scenario")
    sw = scenario("sweep", "run one scenario for several eps values")
    sw.add_argument("--eps", type=_eps_list, help="comma-separated eps values, ascending")
    scenario("group", "run the graph-metric grouping experiment")

    c = sub.add_parser("certify", help="recompute certificates from a stored report")
    c.add_argument("report")

    e = sub.add_parser("export", help="write a report as CSV tables or JSON")
    e.add_argument("report")
    e.add_argument("--format", choices=("csv", "json"), default="csv")
    e.add_argument("--out", required=True)
    return p


def _print_summary(rep: ExperimentReport):
    for r in rep.runs:
        c = r["certificate"]
        print(f"{r['run_id']}: eps={r['eps']:g} J={r['J']:.6g} rho={r['rho']:.6g} gw={r['gw_value']:.6g} "
              f"ratio={c['ratio']:.6g} rank_gap={c['rank_gap']:.3g} status={r['history']['status']}")
    for row in rep.sweep:
        if row["status"] != "ok":
            print(f"{row['run_id']}: eps={row['eps']:g} {row['status']}: {row['error']}")
    if rep.kind == "sweep":
        print(" ".join(f"{k}={v}" for k, v in rep.summary.items()))
    if rep.kind == "group":
        cl = rep.summary["clusters"]
        print(f"clusters={cl['n_clusters']} sizes={cl['cluster_sizes']} match={cl['clusters_match_groups']} "
              f"intra/inter={cl['intra_inter_ratio']:.4g} (expected {cl['expected_ratio']:.4g})")


def _sweep_status(rep: ExperimentReport) -> int:
    codes = {"ok": 0, "infeasible": 2, "numeric_failure": 3}
    return max((codes.get(r["status"], 1) for r in rep.sweep), default=0)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.verb in ("run", "sweep", "group"):
            cfg = load_config(args.config).with_overrides(args.seed, args.tol, args.max_iters)
            if args.verb == "run":
                rep = run_experiment(cfg)
            elif args.verb == "sweep":
                rep = sweep_epsilon(cfg, args.eps)
            else:
                rep = grouping_experiment(cfg)
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, "report.json")
            rep.save(path)
            _print_summary(rep)
            print(f"wrote {path}")
            return _sweep_status(rep) if args.verb == "sweep" else 0
        if args.verb == "certify":
            rows = certify_report(ExperimentReport.load(args.report))
            for r in rows:
                print(f"{r['run_id']}: ratio={r['ratio']:.10g} rank_gap={r['rank_gap']:.3g} global={r['is_global']} "
                      f"rank_one={r['is_rank_one']} gw_error={r['gw_error']:.3g} rho_error={r['rho_error']:.3g} "
                      f"consistent={r['consistent']}")
            return 0 if all(r["consistent"] for r in rows) else 3
        if args.verb == "export":
            for path in export(ExperimentReport.load(args.report), args.format, args.out):
                print(f"wrote {path}")
            return 0
    except GWFormationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1  # pragma: no cover - argparse enforces a verb


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
