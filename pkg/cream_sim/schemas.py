from pathlib import Path
from typing import Annotated, Literal, Self

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from .engine import ControllerSettings, MemoryMetrics
from .errors import ConfigError
from .geometry import ModuleGeometry, TimingParams, validate, validate_timing
from .layout import LayoutMode, Region, RegionConfig, validate_region
from .paging import FaultModel
from .workload import CoreModel, GeneratorSpec, Intensity, MixSpec

type SweepAxis = Annotated[
    Literal["mode", "secded_fraction", "intensive_fraction", "frames_headroom"],
    "run-config knob a sweep varies",
]


class LayoutSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: LayoutMode = LayoutMode.BASELINE
    # None puts the whole baseline space in the CREAM region
    boundary_pages: Annotated[int | None, Field(ge=0)] = None


class CoreWorkload(GeneratorSpec):
    """One core's stream: a trace file, or the generator fields inherited here."""

    trace: Path | None = None

    @property
    def label(self) -> str:
        return str(self.trace) if self.trace is not None else self.kind


class WorkloadSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_cores: PositiveInt = 4
    instruction_budget: PositiveInt = 2_000_000
    seed: int = 0
    cores: list[CoreWorkload] = []
    mix: MixSpec | None = None

    @model_validator(mode="after")
    def check_cores(self) -> Self:
        if self.mix is not None:
            if self.cores:
                raise ConfigError("give either workload.cores or workload.mix, not both")
            if self.mix.n_cores != self.n_cores:
                raise ConfigError(
                    f"mix has {self.mix.n_cores} cores, workload.n_cores is {self.n_cores}"
                )
        elif len(self.cores) != self.n_cores:
            raise ConfigError(
                f"{len(self.cores)} core workloads configured for n_cores = {self.n_cores}"
            )
        return self


class PagingSection(FaultModel):
    enabled: bool = True
    active_ratio: PositiveFloat = 2.0
    frame_limit: PositiveInt | None = None

    def fault_model(self) -> FaultModel:
        return FaultModel(
            penalty_ns=self.penalty_ns, ssd_ns=self.ssd_ns, software_ns=self.software_ns
        )


class ReportSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    interval_cycles: PositiveInt | None = None
    csv: Path | None = None
    weighted_speedup: bool = True
    alone_mode: LayoutMode = LayoutMode.BASELINE


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    geometry: ModuleGeometry = ModuleGeometry()
    timing: TimingParams = TimingParams()
    layout: LayoutSection = LayoutSection()
    cpu: CoreModel = CoreModel()
    workload: WorkloadSection
    paging: PagingSection = PagingSection()
    controller: ControllerSettings = ControllerSettings()
    report: ReportSection = ReportSection()

    @model_validator(mode="after")
    def check_cross_fields(self) -> Self:
        violations = validate(self.geometry) + validate_timing(self.timing, self.geometry)
        if not violations:
            violations = validate_region(self.region)
        if violations:
            raise ConfigError("; ".join(violations))
        return self

    @property
    def region(self) -> RegionConfig:
        boundary = self.layout.boundary_pages
        if boundary is None:
            boundary = self.geometry.baseline_pages
        return RegionConfig(mode=self.layout.mode, boundary_pages=boundary, geometry=self.geometry)

    @property
    def alone_region(self) -> RegionConfig:
        return RegionConfig(mode=self.report.alone_mode, boundary_pages=0, geometry=self.geometry)


class RemoteRunConfig(RunConfig):
    """Run config accepted over HTTP: generated workloads only, no server paths."""

    @model_validator(mode="after")
    def check_no_paths(self) -> Self:
        if any(core.trace is not None for core in self.workload.cores):
            raise ConfigError("trace files cannot be named over HTTP, use generator fields")
        if self.report.csv is not None:
            raise ConfigError("report.csv cannot be set over HTTP")
        return self


class CoreReport(BaseModel):
    core_id: int
    workload: str
    instructions: int
    cycles: int
    ipc: float
    alone_ipc: float | None = None
    mpki: float
    intensity: Intensity
    loads: int
    stores: int
    faults: int


class SimReport(BaseModel):
    mode: LayoutMode
    boundary_pages: int
    seed: int
    capacity_pages: int
    frames: int
    core_cycles: int
    cores: list[CoreReport]
    weighted_speedup: float | None = None
    page_faults: int
    memory: MemoryMetrics
    config: RunConfig

    def metrics(self) -> dict:
        """Everything measured, without the echo of what was asked for."""
        return self.model_dump(mode="json", exclude={"mode", "config"})


class AddressRange(BaseModel):
    region: Region
    first_page: int
    end_page: int
    first_line: int
    end_line: int


class CapacityReport(BaseModel):
    mode: LayoutMode
    boundary_pages: int
    baseline_pages: int
    extra_pages: int
    capacity_pages: int
    gain_percent: float
    ranges: list[AddressRange]


class SweepRow(BaseModel):
    axis: SweepAxis
    value: str
    seed: int
    status: Literal["ok", "error"] = "ok"
    error: str | None = None
    report: SimReport | None = None

    def flat(self) -> dict:
        row = {"axis": self.axis, "value": self.value, "seed": self.seed, "status": self.status}
        row["error"] = self.error or ""
        report = self.report
        if report is None:
            return row
        m = report.memory
        row |= {
            "mode": str(report.mode),
            "boundary_pages": report.boundary_pages,
            "capacity_pages": report.capacity_pages,
            "frames": report.frames,
            "weighted_speedup": report.weighted_speedup,
            "page_faults": report.page_faults,
            "requests": m.requests,
            "device_ops": m.device_ops,
            "device_ops_relaxed": m.device_ops_relaxed,
            "ops_per_request": m.ops_per_request,
            "row_hit_rate": m.row_hit_rate,
            "mean_concurrency": m.mean_concurrency,
            "peak_concurrency": m.peak_concurrency,
            "mean_read_latency": m.mean_read_latency,
        }
        return row
