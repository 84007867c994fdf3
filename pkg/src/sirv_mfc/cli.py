"""Command-line entry point ``sirv-mfc``.

Subcommands::

    sirv-mfc run CONFIG | --preset NAME [--nx N] [--nt N] [--max-iters K] [--out DIR]
    sirv-mfc validate CONFIG
    sirv-mfc norm-study --grids 16,32,64,128 [--out FILE]
    sirv-mfc compare REPORT_A REPORT_B

Run directories default to ``$SIRV_MFC_OUTPUT/<output.directory>`` (``runs/``
when the variable is unset).  Exit status is 0 when the solver converged,
2 when it stopped at the iteration budget and 1 on any error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import PRESETS, load_config_file, preset
from .grid import ConfigurationError
from .pdhg import SolverDivergence
from .run import compare_reports, norm_study, read_report, run, write_norm_study

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITERS = 2

log = logging.getLogger("sirv_mfc")


def _grids(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sirv-mfc", description="Spatial SIRV mean-field control solver.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve one experiment and write its result files")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("config", nargs="?", help="path to a configuration file")
    src.add_argument("--preset", choices=PRESETS, help="use a shipped preset")
    p.add_argument("--nx", type=int, help="override the spatial resolution (square grid)")
    p.add_argument("--nt", type=int, help="override the number of time nodes")
    p.add_argument("--max-iters", type=int, help="override the iteration budget")
    p.add_argument("--out", help="output directory (overrides the output root)")

    p = sub.add_parser("validate", help="check a configuration file and list every problem")
    p.add_argument("config")

    p = sub.add_parser("norm-study", help="estimate the discrete gradient norm on several grids")
    p.add_argument("--grids", type=_grids, default=[16, 32, 64, 128])
    p.add_argument("--out", help="write the CSV table here as well as to stdout")

    p = sub.add_parser("compare", help="print two run reports side by side")
    p.add_argument("report_a")
    p.add_argument("report_b")
    return parser


def _cmd_run(args) -> int:
    cfg = preset(args.preset) if args.preset else load_config_file(args.config)
    if args.nx is not None or args.nt is not None:
        cfg = cfg.with_resolution(args.nx if args.nx is not None else cfg.grid.nx1, args.nt)
    if args.max_iters is not None:
        cfg = cfg.with_solver(max_iters=args.max_iters)
    cfg = cfg.validate()
    report, _ = run(cfg, outdir=args.out)
    print(f"{report.name}: iterations={report.iterations} converged={report.converged} cost={report.cost_total:.6e}")
    print(f"  production={report.production_total:.6e} transport={report.transport_cost:.6e}")
    print("  terminal " + " ".join(f"{k}={v:.6e}" for k, v in report.terminal_mass.items()))
    return EXIT_OK if report.converged else EXIT_MAX_ITERS


def _cmd_validate(args) -> int:
    cfg = load_config_file(args.config)
    cfg.build_model().validate()
    print(f"{args.config}: ok ({cfg.name}, {cfg.grid.nx1}x{cfg.grid.nx2}x{cfg.grid.nt})")
    return EXIT_OK


def _cmd_norm_study(args) -> int:
    rows = norm_study(args.grids)
    sys.stdout.write(write_norm_study(args.out, rows))
    return EXIT_OK


def _cmd_compare(args) -> int:
    a, b = read_report(args.report_a), read_report(args.report_b)
    width = max((len(k) for k in a), default=10)
    print(f"{'key':<{width}}  {'A':>14}  {'':2}  {'B':>14}")
    for key, va, vb, rel in compare_reports(a, b):
        fa = f"{va:.6e}" if isinstance(va, float) else str(va)
        fb = f"{vb:.6e}" if isinstance(vb, float) else str(vb)
        print(f"{key:<{width}}  {fa:>14}  {rel:2}  {fb:>14}")
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "validate": _cmd_validate,
    "norm-study": _cmd_norm_study,
    "compare": _cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, SolverDivergence, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
