"""Command-line front end.

Subcommands: ``run`` executes an experiment described by a JSON config and
writes report.json, CSV tables and figures into the output directory;
``export-op`` / ``import-op`` move operators through Matrix Market files;
``print-schema`` shows the config schema.

Exit codes: 0 all checks pass, 2 warnings only, 1 any failure or numerical
error, 3 configuration error.

Heavy imports happen after argument parsing so that ``--threads`` can cap
BLAS pools before numpy starts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_WARN = 2
EXIT_CONFIG = 3


def _schema() -> dict:
    text = resources.files("diracgrid").joinpath("config_schema.json").read_text()
    return json.loads(text)


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            config = json.load(handle)
    except FileNotFoundError:
        raise SystemExit2(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise SystemExit2(f"config {path}: invalid JSON at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}")
    import jsonschema
    validator = jsonschema.Draft202012Validator(_schema())
    problems = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if problems:
        lines = []
        for err in problems:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            lines.append(f"  at {where}: {err.message}")
        raise SystemExit2(f"config {path} failed schema validation:\n" + "\n".join(lines))
    return config


class SystemExit2(Exception):
    """Config-level failure carrying the diagnostic message (exit 3)."""


def _set_threads(threads: int | None):
    if threads is None:
        return
    if "numpy" in sys.modules:
        os.environ["DIRACGRID_THREADS_LATE"] = "1"
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(threads)


def _run(args) -> int:
    try:
        config = load_config(args.config)
    except SystemExit2 as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG

    from . import __version__
    from .errors import DiracGridError, PreconditionError
    from .experiments import RUNNERS, semantic_config_checks
    from .reporting import write_csv, write_report

    if args.seed is not None:
        config["seed"] = args.seed

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        semantic_config_checks(config)
    except PreconditionError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    import numpy
    import scipy

    started = time.perf_counter()
    report = {
        "config": config,
        "experiment": config["experiment"],
        "versions": {"diracgrid": __version__, "numpy": numpy.__version__,
                     "scipy": scipy.__version__},
        "reproducible": bool(args.repro),
    }
    try:
        output = RUNNERS[config["experiment"]](config)
    except PreconditionError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DiracGridError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        if not args.repro:
            report["timing"] = {"seconds": time.perf_counter() - started}
        write_report(out_dir, report)
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_FAIL

    report["results"] = output.results
    report["checks"] = output.checks
    report["tolerances"] = output.tolerances

    artifacts = []
    for name, header, rows in output.csvs:
        artifacts.append(str(write_csv(out_dir, name, header, rows).name))
    if not args.no_figures:
        for painter in output.figures:
            artifacts.append(str(Path(painter(out_dir)).name))
    report["artifacts"] = sorted(artifacts)
    if not args.repro:
        report["timing"] = {"seconds": time.perf_counter() - started}
    write_report(out_dir, report)

    statuses = [c["status"] for c in output.checks]
    for c in output.checks:
        print(f"[{c['status'].upper():4s}] {c['name']}: {c['value']}")
    if "fail" in statuses:
        return EXIT_FAIL
    if "warn" in statuses:
        return EXIT_WARN
    return EXIT_PASS


def _export_op(args) -> int:
    try:
        config = load_config(args.config)
    except SystemExit2 as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    from .errors import DiracGridError
    from .experiments import build_triple_from_config
    from .io import export_matrix_market

    which = config.get("operator", "gamma")
    try:
        ts = build_triple_from_config(config)
        matrix = {"gamma": ts.triple.gamma_mat,
                  "gamma_star": ts.triple.gamma_star,
                  "gamma_star_b": ts.triple.gamma_star_b,
                  "pi": ts.triple.pi,
                  "pi_b": ts.triple.pi_b}[which]
        export_matrix_market(matrix, args.target)
    except DiracGridError as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"wrote {which} ({matrix.shape[0]}x{matrix.shape[1]}) to {args.target}")
    return EXIT_PASS


def _import_op(args) -> int:
    from .errors import ArgumentError
    from .io import import_matrix_market
    try:
        matrix = import_matrix_market(args.path)
    except ArgumentError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAIL
    from ._solve import spectral_norm
    print(f"{args.path}: shape {matrix.shape[0]}x{matrix.shape[1]}, "
          f"nnz {matrix.nnz}, norm {spectral_norm(matrix):.6e}")
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diracgrid",
        description="perturbed Dirac-type operator calculus on periodic grids")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment from a JSON config")
    run.add_argument("--config", required=True, help="path to the JSON config")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override config seed")
    run.add_argument("--threads", type=int, default=None,
                     help="cap BLAS/worker threads")
    run.add_argument("--repro", action="store_true",
                     help="strip timing for byte-identical reports")
    run.add_argument("--no-figures", action="store_true",
                     help="skip figure rendering")

    exp = sub.add_parser("export-op", help="assemble an operator and write Matrix Market")
    exp.add_argument("--config", required=True)
    exp.add_argument("--target", required=True, help="output .mtx path")

    imp = sub.add_parser("import-op", help="read a Matrix Market operator and summarize")
    imp.add_argument("path")

    sub.add_parser("print-schema", help="print the JSON config schema")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        _set_threads(args.threads)
        return _run(args)
    if args.command == "export-op":
        return _export_op(args)
    if args.command == "import-op":
        return _import_op(args)
    if args.command == "print-schema":
        print(json.dumps(_schema(), indent=2, sort_keys=True))
        return EXIT_PASS
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
