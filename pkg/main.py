"""CLI: cell solves, averaging, path simulation and the verification battery.

    python main.py verify --config configs/ou_forward.cfg
    python main.py simulate --config configs/ou_backward.cfg --paths 2000 --seed 7
    python main.py report --out results/ou_forward
"""
import argparse
import logging
import sys
import time
from pathlib import Path

from errors import MsThermoError
from settings import get_log_level


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="Experiment .cfg file")
    parser.add_argument("--seed", type=int, help="Override [run] seed")
    parser.add_argument("--paths", type=int, help="Override [run] n_paths")
    parser.add_argument("--eps", help="Override [model] epsilon (comma-separated list)")
    parser.add_argument("--dt", type=float, help="Override [run] dt")
    parser.add_argument("--out", help="Output directory (default: $MSTHERMO_OUTPUT_DIR/<config name>)")
    parser.add_argument(
        "--functional",
        action="append",
        help="Functional to accumulate; repeat or comma-separate (e.g. F_eps,F,F1,F2)",
    )
    parser.add_argument(
        "--rule",
        action="append",
        help="Stopping rule: fixed_time or first_exit:lo,hi (repeatable)",
    )
    parser.add_argument("--xlsx", action="store_true", default=None, help="Also write results.xlsx")
    parser.add_argument("--dump-paths", action="store_true", default=None, help="Write per-path arrays (.npz)")


def _overrides(args) -> dict:
    functionals = None
    if args.functional:
        functionals = tuple(p.strip() for item in args.functional for p in item.split(",") if p.strip())
    return {
        "seed": args.seed,
        "n_paths": args.paths,
        "epsilons": args.eps,
        "dt": args.dt,
        "out_dir": args.out,
        "functionals": functionals,
        "rules": tuple(args.rule) if args.rule else None,
        "xlsx": args.xlsx,
        "dump_paths": args.dump_paths,
    }


def _load(args):
    from harness.config import load_config

    return load_config(args.config, _overrides(args))


def cmd_cell_solve(args) -> int:
    from harness.runner import prepare, solve_cells

    cfg = _load(args)
    start = time.perf_counter()
    stage = prepare(cfg)
    new = solve_cells(stage)
    worst = {}
    for sol in stage.cells.cells():
        for key, value in sol.diagnostics.items():
            worst[key] = max(worst.get(key, 0.0), value)
    print(f"cell-solve: {new} new / {len(stage.cells)} cells ({stage.backend}), {time.perf_counter() - start:.1f}s")
    for key, value in sorted(worst.items()):
        print(f"  {key:<24} {value:.3e}")
    return 0


def cmd_average(args) -> int:
    from harness.runner import average, prepare, prepare_backward

    cfg = _load(args)
    stage = prepare(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    avg = average(stage)
    avg.export_csv(out / "averaged.csv")
    print(f"average: {stage.xt.shape} nodes -> {out / 'averaged.csv'}")
    if cfg.parity or any(name.startswith(("G", "H", "I", "S_tot")) for name in cfg.functionals):
        prepare_backward(stage)
        stage.avg_backward.export_csv(out / "averaged_backward.csv")
        for key, value in sorted(stage.ext_backward.residuals.items()):
            print(f"  {key:<24} {value:.3e}")
    return 0


def cmd_run(args, checks: bool) -> int:
    from harness.runner import estimates_only, run_experiment

    cfg = _load(args)
    if not checks:
        cfg = estimates_only(cfg)
    stats, written = run_experiment(cfg)
    failed = stats.gated_failures()
    print(
        f"{'verify' if checks else 'simulate'}: {len(stats.estimates)} estimates, "
        f"{len(stats.verdicts)} verdicts, {len(failed)} failed -> {written['report']}"
    )
    return stats.exit_code


def cmd_report(args) -> int:
    from harness.report import rebuild_report

    out = args.out
    if not out:
        out = _load(args).out_dir
    sys.stdout.write(rebuild_report(out))
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description="Thermodynamic functionals of multiscale diffusions")
    parser.add_argument("-v", "--verbose", action="store_true", help="Verbose logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("cell-solve", "Solve and cache the cell problems on the slow grid"),
        ("average", "Tabulate averaged coefficients to CSV"),
        ("simulate", "Simulate and estimate the selected functionals"),
        ("verify", "Simulate and run the verification battery"),
    ):
        _add_run_flags(sub.add_parser(name, help=help_text))
    report = sub.add_parser("report", help="Rebuild report.txt from a results directory")
    report.add_argument("--out", help="Results directory")
    report.add_argument("--config", help="Config whose default output directory to use")
    args = parser.parse_args()

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else get_log_level(),
        format="%(levelname)s %(message)s",
    )

    if args.command == "report" and not (args.out or args.config):
        parser.error("report needs --out or --config")
    handlers = {
        "cell-solve": cmd_cell_solve,
        "average": cmd_average,
        "simulate": lambda a: cmd_run(a, checks=False),
        "verify": lambda a: cmd_run(a, checks=True),
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except MsThermoError as exc:
        logging.error("%s", exc)
        return 2
    except FileNotFoundError as exc:
        logging.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
