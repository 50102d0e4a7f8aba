"""Single runs, parameter sweeps and capacity tables."""

import asyncio
import tomllib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from loguru import logger
from pydantic import ValidationError

from .engine import Controller
from .errors import ConfigError, CreamError
from .geometry import ModuleGeometry
from .layout import LayoutMode, Region, RegionConfig, get_layout
from .paging import DirectMemory, PagedMemory
from .schemas import (
    AddressRange,
    CapacityReport,
    CoreReport,
    RunConfig,
    SimReport,
    SweepAxis,
    SweepRow,
)
from .utils import derive_seed, write_csv
from .workload import (
    Core,
    CoreStats,
    MemorySystem,
    TraceEntry,
    build_mix,
    classify_mpki,
    drive,
    gen_trace,
    load_trace,
    mpki,
    weighted_speedup,
    working_set,
)

type Workload = tuple[str, list[TraceEntry]]


def load_config(path: Path | str) -> RunConfig:
    """Read a TOML run config; relative trace paths resolve against its folder."""
    path = Path(path)
    with open(path, "rb") as f:
        data = tomllib.load(f)
    for core in data.get("workload", {}).get("cores", []):
        trace = core.get("trace")
        if trace is not None and not Path(trace).is_absolute():
            core["trace"] = str(path.parent / trace)
    return RunConfig.model_validate(data)


def build_workloads(config: RunConfig) -> list[Workload]:
    workload = config.workload
    if workload.mix is not None:
        specs = build_mix(workload.mix, seed=workload.seed)
        return [(f"{spec.kind}-{spec.seed}", gen_trace(spec)) for spec in specs]

    workloads = []
    for core_id, core in enumerate(workload.cores):
        if core.trace is not None:
            workloads.append((core.label, load_trace(core.trace)))
            continue
        seed = core.seed if core.seed is not None else derive_seed(workload.seed, core_id)
        workloads.append((core.label, gen_trace(core, seed)))
    return workloads


class Simulation:
    """One isolated, deterministic run of cores against one memory layout."""

    def __init__(
        self,
        config: RunConfig,
        region: RegionConfig | None = None,
        workloads: list[Workload] | None = None,
    ):
        self.config = config
        self.region = region or config.region
        self.layout = get_layout(self.region)
        self.workloads = workloads if workloads is not None else build_workloads(config)
        self.controller = Controller(self.layout, config.timing, config.controller)

        paging = config.paging
        self.frames = self.layout.capacity_pages
        if paging.enabled and paging.frame_limit is not None:
            self.frames = min(self.frames, paging.frame_limit)
        if paging.enabled:
            memory = PagedMemory(
                self.frames,
                config.geometry.lines_per_row,
                paging.fault_model(),
                config.cpu.freq_ghz,
                paging.active_ratio,
            )
        else:
            memory = DirectMemory(self.layout.capacity_lines)
        self.memory = memory
        self.system = MemorySystem(
            self.controller, memory, config.cpu.freq_ghz, config.report.interval_cycles
        )
        budget = config.workload.instruction_budget
        self.cores = [
            Core(core_id, config.cpu, trace, self.system, budget)
            for core_id, (_, trace) in enumerate(self.workloads)
        ]
        self.core_cycles = 0

    def run(self) -> list[CoreStats]:
        logger.info(
            f"simulating {len(self.cores)} cores on {self.layout.mode} "
            f"(boundary {self.layout.boundary} pages, {self.frames} frames)"
        )
        self.core_cycles = drive(self.cores, self.system)
        self.controller.drain()
        self.controller.check_conservation()
        if isinstance(self.memory, PagedMemory):
            self.memory.table.check()
        logger.info(f"simulation finished after {self.core_cycles} core cycles")
        return [core.stats() for core in self.cores]


def alone_ipc(config: RunConfig, workload: Workload) -> float:
    """IPC of one workload running by itself on the reference layout."""
    simulation = Simulation(config, region=config.alone_region, workloads=[workload])
    return simulation.run()[0].ipc


def execute(config: RunConfig) -> tuple[SimReport, Simulation]:
    """Run a config and keep the finished simulation for its logs and samples."""
    workloads = build_workloads(config)
    simulation = Simulation(config, workloads=workloads)
    stats = simulation.run()

    alone = [None] * len(stats)
    speedup = None
    if config.report.weighted_speedup:
        alone = [alone_ipc(config, workload) for workload in workloads]
        speedup = weighted_speedup([s.ipc for s in stats], alone)

    cores = [
        CoreReport(
            core_id=s.core_id,
            workload=label,
            instructions=s.instructions,
            cycles=s.cycles,
            ipc=s.ipc,
            alone_ipc=alone[s.core_id],
            mpki=mpki(trace),
            intensity=classify_mpki(trace),
            loads=s.loads,
            stores=s.stores,
            faults=s.faults,
        )
        for s, (label, trace) in zip(stats, workloads)
    ]
    if config.report.csv is not None and config.report.interval_cycles:
        write_csv(simulation.system.samples, config.report.csv)

    layout = simulation.layout
    report = SimReport(
        mode=layout.mode,
        boundary_pages=layout.boundary,
        seed=config.workload.seed,
        capacity_pages=layout.capacity_pages,
        frames=simulation.frames,
        core_cycles=simulation.core_cycles,
        cores=cores,
        weighted_speedup=speedup,
        page_faults=simulation.memory.faults,
        memory=simulation.controller.metrics(),
        config=config,
    )
    return report, simulation


def run(config: RunConfig) -> SimReport:
    return execute(config)[0]


def report_json(report: SimReport) -> str:
    return report.model_dump_json(indent=2)


# -- capacity ------------------------------------------------------------------


def capacity_report(
    mode: LayoutMode,
    boundary_pages: int | None = None,
    geometry: ModuleGeometry | None = None,
) -> CapacityReport:
    geometry = geometry or ModuleGeometry()
    if boundary_pages is None:
        boundary_pages = geometry.baseline_pages
    layout = get_layout(RegionConfig(mode=mode, boundary_pages=boundary_pages, geometry=geometry))
    lines = geometry.lines_per_row
    spans = [
        (Region.CREAM, 0, layout.boundary),
        (Region.SECDED, layout.boundary, layout.baseline_pages),
        (Region.EXTRA, layout.baseline_pages, layout.capacity_pages),
    ]
    ranges = [
        AddressRange(
            region=region,
            first_page=first,
            end_page=end,
            first_line=first * lines,
            end_line=end * lines,
        )
        for region, first, end in spans
        if end > first
    ]
    return CapacityReport(
        mode=mode,
        boundary_pages=layout.boundary,
        baseline_pages=layout.baseline_pages,
        extra_pages=layout.extra_pages,
        capacity_pages=layout.capacity_pages,
        gain_percent=100 * layout.extra_pages / layout.baseline_pages,
        ranges=ranges,
    )


# -- sweeps --------------------------------------------------------------------


def secded_boundary(fraction: float, geometry: ModuleGeometry) -> int:
    """Boundary pages leaving ``fraction`` of the baseline space in SECDED."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"secded fraction {fraction} outside [0, 1]")
    groups = round((1.0 - fraction) * geometry.baseline_pages / geometry.banks)
    return groups * geometry.banks


def apply_axis(config: RunConfig, axis: SweepAxis, value: str | float) -> RunConfig:
    """Copy of ``config`` with one knob changed; traces still come from the base seed."""
    data = config.model_dump()
    if axis == "mode":
        data["layout"]["mode"] = str(value)
    elif axis == "secded_fraction":
        data["layout"]["boundary_pages"] = secded_boundary(float(value), config.geometry)
    elif axis == "intensive_fraction":
        if config.workload.mix is None:
            raise ConfigError("an intensive_fraction sweep needs workload.mix")
        data["workload"]["mix"]["intensive_fraction"] = float(value)
    elif axis == "frames_headroom":
        if not config.paging.enabled:
            raise ConfigError("a frames_headroom sweep needs paging enabled")
        traces = [trace for _, trace in build_workloads(config)]
        pages = working_set(traces, config.geometry.page_bytes)
        data["paging"]["frame_limit"] = max(1, round(float(value) * pages))
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    return RunConfig.model_validate(data)


async def _run_parallel(configs: Sequence[RunConfig], jobs: int) -> list:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return await asyncio.gather(
            *[loop.run_in_executor(pool, run, config) for config in configs],
            return_exceptions=True,
        )


def sweep(
    config: RunConfig,
    axis: SweepAxis,
    values: Sequence[str | float],
    jobs: int = 1,
) -> list[SweepRow]:
    """One row per value, in value order; a failing row does not stop the rest.

    Every row replays the same workloads. Row seeds only label the rows.
    """
    rows = [
        SweepRow(axis=axis, value=str(value), seed=derive_seed(config.workload.seed, i))
        for i, value in enumerate(values)
    ]
    configs = {}
    for i, (row, value) in enumerate(zip(rows, values)):
        try:
            configs[i] = apply_axis(config, axis, value)
        except (CreamError, ValidationError) as e:
            row.status, row.error = "error", str(e)

    pending = sorted(configs)
    if jobs > 1:
        results = asyncio.run(_run_parallel([configs[i] for i in pending], jobs))
    else:
        results = []
        for i in pending:
            try:
                results.append(run(configs[i]))
            except (CreamError, ValidationError, OSError) as e:
                results.append(e)

    for i, result in zip(pending, results):
        if isinstance(result, BaseException):
            rows[i].status, rows[i].error = "error", f"{type(result).__name__}: {result}"
        else:
            rows[i].report = result
    for row in rows:
        if row.status == "error":
            logger.warning(f"sweep row {axis}={row.value} failed: {row.error}")
    return rows


def sweep_table(rows: Sequence[SweepRow]) -> list[dict]:
    return [row.flat() for row in rows]
