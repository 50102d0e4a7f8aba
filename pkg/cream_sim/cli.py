import argparse
import json
import sys
import tomllib
from pathlib import Path
from typing import get_args

from loguru import logger
from pydantic import ValidationError

from .engine import write_command_log
from .errors import CreamError
from .geometry import ModuleGeometry
from .harness import (
    capacity_report,
    execute,
    load_config,
    report_json,
    sweep,
    sweep_table,
)
from .layout import LayoutMode, RegionConfig, Rw, describe_footprint, describe_plan, get_layout
from .schemas import SweepAxis
from .utils import rows_to_csv_buffer, write_csv
from .workload import GeneratorSpec, gen_trace, write_trace

AXES = get_args(SweepAxis.__value__.__origin__)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        out.write_text(text)


def _region(args: argparse.Namespace) -> RegionConfig:
    geometry = ModuleGeometry(rows_per_bank=args.rows_per_bank)
    boundary = geometry.baseline_pages if args.boundary is None else args.boundary
    return RegionConfig(mode=args.mode, boundary_pages=boundary, geometry=geometry)


def cmd_simulate(args: argparse.Namespace) -> None:
    config = load_config(args.config)
    if args.csv is not None:
        interval = config.report.interval_cycles or 10_000
        config.report = config.report.model_copy(update={"csv": args.csv, "interval_cycles": interval})
    if args.command_log is not None:
        config.controller = config.controller.model_copy(update={"command_log": True})
    report, simulation = execute(config)
    if args.command_log is not None:
        write_command_log(simulation.controller.log, args.command_log)
    _emit(report_json(report), args.out)


def cmd_sweep(args: argparse.Namespace) -> None:
    config = load_config(args.config)
    rows = sweep(config, args.axis, args.values, jobs=args.jobs)
    if args.format == "json":
        payload = [row.model_dump(mode="json", exclude={"report": {"config"}}) for row in rows]
        _emit(json.dumps(payload, indent=2), args.out)
    elif args.out is not None:
        write_csv(sweep_table(rows), args.out)
    else:
        _emit(rows_to_csv_buffer(sweep_table(rows)).getvalue(), None)


def cmd_translate(args: argparse.Namespace) -> None:
    layout = get_layout(_region(args))
    line = int(args.addr, 16) // layout.geometry.line_bytes
    result = {
        "addr": args.addr,
        "line": line,
        "footprint": describe_footprint(layout.locate(line)),
        "plan": describe_plan(layout.plan_access(line, Rw(args.rw))),
    }
    if line >= layout.baseline_lines and layout.mode in (LayoutMode.PACKED, LayoutMode.PACKED_RS):
        result["acc_lines"] = list(layout.translate_extra(line))
    _emit(json.dumps(result, indent=2), None)


def cmd_capacity(args: argparse.Namespace) -> None:
    region = _region(args)
    report = capacity_report(region.mode, region.boundary_pages, region.geometry)
    _emit(report.model_dump_json(indent=2), None)


def cmd_gen_trace(args: argparse.Namespace) -> None:
    with open(args.spec, "rb") as f:
        spec = GeneratorSpec.model_validate(tomllib.load(f))
    entries = gen_trace(spec, args.seed)
    if args.out is None:
        sys.stdout.writelines(f"{entry}\n" for entry in entries)
    else:
        write_trace(entries, args.out)


def cmd_serve(args: argparse.Namespace) -> None:
    import uvicorn

    uvicorn.run("cream_sim.main:app", host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cream-sim", description="ECC DRAM layout simulator"
    )
    parser.add_argument("--log-level", default="WARNING", help="loguru level for stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("simulate", help="run one configuration, print a JSON report")
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--csv", type=Path, help="per-interval statistics")
    p.add_argument("--command-log", type=Path)
    p.set_defaults(func=cmd_simulate)

    p = commands.add_parser("sweep", help="run one configuration per axis value")
    p.add_argument("config", type=Path)
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_sweep)

    for name, func, help_text in (
        ("translate", cmd_translate, "show where an address is stored and how it is accessed"),
        ("capacity", cmd_capacity, "capacity and address ranges of a layout"),
    ):
        p = commands.add_parser(name, help=help_text)
        p.add_argument("--mode", type=LayoutMode, choices=list(LayoutMode), required=True)
        p.add_argument("--boundary", type=int, help="boundary pages (default: all)")
        p.add_argument("--rows-per-bank", type=int, default=ModuleGeometry().rows_per_bank)
        if name == "translate":
            p.add_argument("--addr", required=True, help="physical byte address, hex")
            p.add_argument("--rw", choices=[str(rw) for rw in Rw], default="R")
        p.set_defaults(func=func)

    p = commands.add_parser("gen-trace", help="write a synthetic trace")
    p.add_argument("spec", type=Path, help="TOML generator spec")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--out", type=Path)
    p.set_defaults(func=cmd_gen_trace)

    p = commands.add_parser("serve", help="serve the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logger.remove()
    logger.add(sys.stderr, level=args.log_level.upper())
    try:
        args.func(args)
    except (CreamError, ValidationError, OSError, ValueError) as e:
        error = {"error": type(e).__name__, "message": str(e)}
        sys.stderr.write(json.dumps(error) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
