"""Command-line interface: ``phcm run|audit|oracle|plot|list-scenarios``."""
from __future__ import annotations

import argparse
import json
import sys

from phcm import __version__
from phcm.errors import PHCMError
from phcm.simulator import (LEDGER_COLUMNS, audit_scenario, bundled_scenarios, load_scenario, oracle_report,
                            plot_ledger, run_scenario)


def _cmd_run(args):
    res = run_scenario(args.config, output_dir=args.output_dir, plot=args.plot,
                       snapshots=not args.no_snapshots)
    s = res.summary()
    if not args.quiet:
        print(f"scenario {s['scenario']}: {s['steps']} steps to t = {s['t_final']:.6g}")
        print(f"  total energy      {s['E_total_initial']:.10e} -> {s['E_total_final']:.10e} "
              f"(relative change {s['relative_energy_change']:.3e})")
        print(f"  max |res_energy|  {s['max_res_energy']:.3e}")
        print(f"  mass drift        {s['mass_drift']:.3e}")
        print(f"  audit residuals   algebraic {s['max_res_dirac_alg']:.3e}, mesh {s['max_res_dirac_mesh']:.3e}")
        for k, v in s["final_diagnostics"].items():
            print(f"  {k:<17} {v}")
        if res.ledger_path:
            print(f"  ledger            {res.ledger_path}")
    return 0


def _cmd_audit(args):
    rep = audit_scenario(args.config)
    if args.json:
        print(json.dumps(rep, indent=2))
        return 0
    print(f"scenario {rep['scenario']}")
    for label in ("initial", "step"):
        r = rep[label]
        print(f"  {label}: aggregate {r['aggregate']:.3e} (algebraic {r['by_class']['algebraic']:.3e}, "
              f"mesh {r['by_class']['mesh']:.3e})")
        if label == "initial":
            for b in r["blocks"]:
                flag = "  FLAGGED" if b["flagged"] else ""
                print(f"    {b['block']:<10} {b['tolerance']:<9} residual {b['residual']:+.3e} "
                      f"threshold {b['threshold']:.1e}{flag}")
        if r["flagged"]:
            print(f"    flagged blocks: {sorted(set(r['flagged']))}")
    return 0


def _cmd_oracle(args):
    rep = oracle_report(args.config)
    if args.json:
        print(json.dumps(rep, indent=2))
        return 0
    print(f"scenario {rep['scenario']} ({rep['representation']}), h = {rep['h']:.4g}")
    for k, v in rep["max_abs_difference"].items():
        print(f"  {k:<6} max |block - oracle| = {v:.3e}   (max |oracle| = {rep['max_abs_oracle'][k]:.3e})")
    return 0


def _cmd_plot(args):
    paths = plot_ledger(args.ledger, args.columns, args.output_dir)
    for p in paths:
        print(p)
    return 0


def _cmd_list(args):
    for name, path in bundled_scenarios().items():
        sc = load_scenario(path)
        print(f"{name:<34} {sc.representation:<10} {sc.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phcm", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write its ledger")
    p.add_argument("config", help="scenario JSON file or bundled scenario name")
    p.add_argument("-o", "--output-dir", default="phcm-output",
                   help="output directory (overridden by PHCM_OUTPUT_DIR)")
    p.add_argument("--plot", action="store_true", help="write one PNG per ledger column")
    p.add_argument("--no-snapshots", action="store_true", help="skip snapshot CSVs")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("audit", help="power-balance report of one evaluation and one step")
    p.add_argument("config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("oracle", help="compare block rates with the tensor-calculus oracle")
    p.add_argument("config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("plot", help="plot ledger columns")
    p.add_argument("ledger")
    p.add_argument("--columns", nargs="+", choices=[c for c in LEDGER_COLUMNS if c != "t"])
    p.add_argument("-o", "--output-dir", default=None)
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("list-scenarios", help="list bundled scenarios")
    p.set_defaults(func=_cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PHCMError, OSError) as exc:
        print(f"phcm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
