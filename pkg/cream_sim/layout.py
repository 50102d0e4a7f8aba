"""Where every cache line lives, per layout mode.

Physical line addresses are split into three ranges by the boundary register:

    [0, boundary)                 CREAM region, stored with the mode's layout
    [boundary, baseline)          SECDED region, stored like an ordinary ECC DIMM
    [baseline, capacity)          extra pages carved out of the ECC chip

``locate`` answers "which bytes of which slices hold this line" and
``plan_access`` answers "which device operations does the controller issue to
read or write it". Both are pure functions of (RegionConfig, line).
"""

from dataclasses import dataclass
from enum import StrEnum
from functools import lru_cache
from math import ceil
from typing import Iterator, NamedTuple

from pydantic import BaseModel, ConfigDict, Field

from .errors import AddressError, LayoutError
from .geometry import ModuleGeometry, SliceId, validate

ENUMERATION_LIMIT = 2**22


class LayoutMode(StrEnum):
    BASELINE = "baseline"
    PACKED = "packed"
    PACKED_RS = "packed-rs"
    INTER_WRAP = "inter-wrap"
    PARITY = "parity"


PACKED_FAMILY = frozenset({LayoutMode.PACKED, LayoutMode.PACKED_RS})
# Modes whose CREAM-region addresses go through the bridge chip.
BRIDGED_MODES = frozenset({LayoutMode.PACKED_RS, LayoutMode.INTER_WRAP, LayoutMode.PARITY})


class Region(StrEnum):
    CREAM = "cream"
    SECDED = "secded"
    EXTRA = "extra"


class Rw(StrEnum):
    READ = "R"
    WRITE = "W"


class OpRole(StrEnum):
    DATA = "data"
    # read leg that stages co-located bytes in the 64B register for a merge
    ECC_SIDE = "ecc-side"
    PARITY_READ = "parity-read"
    PARITY_WRITE = "parity-write"


class Staging(StrEnum):
    NONE = "none"
    RMW = "rmw"


class RegionConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: LayoutMode = LayoutMode.BASELINE
    boundary_pages: int = Field(default=0, ge=0)
    geometry: ModuleGeometry = ModuleGeometry()

    @classmethod
    def full(cls, mode: LayoutMode, geometry: ModuleGeometry | None = None) -> "RegionConfig":
        """Whole baseline space in the CREAM layout."""
        geometry = geometry or ModuleGeometry()
        return cls(mode=mode, boundary_pages=geometry.baseline_pages, geometry=geometry)


class Lane(NamedTuple):
    slice: SliceId
    row: int


class Cell(NamedTuple):
    """One 8-byte column of one slice row."""

    slice: SliceId
    row: int
    column: int


@dataclass(frozen=True, slots=True)
class SideLane:
    """SECDED code or parity byte stored beside a line's data."""

    kind: str
    slice: SliceId
    row: int
    column: int
    byte: int | None = None


@dataclass(frozen=True, slots=True)
class Footprint:
    """Storage of one cache line.

    Lane j carries data byte j of every burst. Striped footprints (``width``
    1) use eight distinct slices at one column; packed footprints (``width``
    8) keep all lanes in one ECC-chip slice at eight consecutive columns.
    """

    line: int
    region: Region
    lanes: tuple[Lane, ...]
    column: int
    width: int
    side: SideLane | None = None

    def cells(self) -> list[Cell]:
        if self.width == 1:
            return [Cell(lane.slice, lane.row, self.column) for lane in self.lanes]
        return [
            Cell(lane.slice, lane.row, self.column + j) for j, lane in enumerate(self.lanes)
        ]

    def chips(self) -> frozenset[int]:
        return frozenset(lane.slice.chip for lane in self.lanes)


@dataclass(frozen=True, slots=True)
class DeviceOp:
    rw: Rw
    group: tuple[Lane, ...]
    column: int
    role: OpRole
    # index of the op in the same plan whose data must be staged first
    after: int | None = None

    @property
    def slices(self) -> tuple[SliceId, ...]:
        return tuple(lane.slice for lane in self.group)


@dataclass(frozen=True, slots=True)
class AccessPlan:
    line: int
    rw: Rw
    region: Region
    ops: tuple[DeviceOp, ...]
    staging: Staging
    bridged: bool
    # op count if packed extra-page writes were plain writes instead of RMW pairs
    relaxed_op_count: int


def validate_region(config: RegionConfig) -> list[str]:
    geometry = config.geometry
    violations = validate(geometry)
    if config.boundary_pages > geometry.baseline_pages:
        violations.append(
            f"boundary_pages {config.boundary_pages} exceeds baseline pages "
            f"{geometry.baseline_pages}"
        )
    if config.boundary_pages % geometry.banks:
        violations.append(
            f"boundary_pages {config.boundary_pages} is not a whole number of "
            f"row-groups ({geometry.banks} pages each)"
        )
    if config.mode is not LayoutMode.BASELINE:
        if geometry.banks != geometry.data_chips:
            violations.append(
                f"{config.mode} layout needs banks == data_chips "
                f"({geometry.banks} != {geometry.data_chips})"
            )
        if geometry.lines_per_row % geometry.banks:
            violations.append(
                f"lines_per_row {geometry.lines_per_row} must be divisible by banks "
                f"{geometry.banks}"
            )
    return violations


def check_region(config: RegionConfig) -> None:
    violations = validate_region(config)
    if violations:
        raise LayoutError("; ".join(violations))


class Layout:
    """Compiled address map of one RegionConfig."""

    def __init__(self, config: RegionConfig):
        check_region(config)
        self.config = config
        self.mode = config.mode
        geometry = config.geometry
        self.geometry = geometry
        self.banks = geometry.banks
        self.data_chips = geometry.data_chips
        self.ecc_chip = geometry.ecc_chip
        self.lines_per_row = geometry.lines_per_row
        self.baseline_pages = geometry.baseline_pages
        self.baseline_lines = geometry.baseline_lines
        # line_bytes / chip_bytes_per_line chip-8 columns make up one packed line
        self.parts = geometry.line_bytes // geometry.chip_bytes_per_line
        # BaselineSecded ignores the boundary register
        self.boundary = 0 if self.mode is LayoutMode.BASELINE else config.boundary_pages
        self.row_groups = self.boundary // self.banks
        self.boundary_lines = self.boundary * self.lines_per_row

        self.parity_rows = 0
        self.extra_parity_rows = 0
        self.extra_data_row = 0
        if self.mode is LayoutMode.PARITY:
            self.lines_per_bank = self.lines_per_row // self.banks
            self.pages_per_parity_row = geometry.chip_row_bytes // self.lines_per_row
            self.extra_pages_per_parity_row = geometry.chip_row_bytes // self.lines_per_bank
            self.parity_rows = ceil(self.row_groups / self.pages_per_parity_row)
            self.extra_pages = self._parity_extra_pages()
            self.extra_parity_rows = ceil(self.extra_pages / self.extra_pages_per_parity_row)
            self.extra_data_row = self.parity_rows + self.extra_parity_rows
        elif self.mode is LayoutMode.BASELINE:
            self.extra_pages = 0
        else:
            self.lines_per_bank = self.lines_per_row // self.banks
            self.extra_pages = self.row_groups

        self.capacity_pages = self.baseline_pages + self.extra_pages
        self.capacity_lines = self.capacity_pages * self.lines_per_row

    def _parity_fits(self, extra: int) -> bool:
        used = extra + self.parity_rows + ceil(extra / self.extra_pages_per_parity_row)
        return used <= self.row_groups

    def _parity_extra_pages(self) -> int:
        free_rows = self.row_groups - self.parity_rows
        if free_rows <= 0:
            return 0
        per_row = self.extra_pages_per_parity_row
        extra = free_rows * per_row // (per_row + 1)
        while self._parity_fits(extra + 1):
            extra += 1
        while extra > 0 and not self._parity_fits(extra):
            extra -= 1
        return extra

    # -- address classification -------------------------------------------

    def region_of(self, line: int) -> Region:
        if line >= self.baseline_lines:
            return Region.EXTRA
        if line < self.boundary_lines:
            return Region.CREAM
        return Region.SECDED

    def _check_line(self, line: int) -> None:
        if not 0 <= line < self.capacity_lines:
            raise AddressError(
                f"line {line:#x} outside the {self.mode} address space "
                f"[0, {self.capacity_lines:#x})"
            )

    # -- storage --------------------------------------------------------------

    def _bank_lanes(self, bank: int, row: int, chips: range) -> tuple[Lane, ...]:
        return tuple(Lane(SliceId(chip, bank), row) for chip in chips)

    def _wrap_lanes(self, slot: int, row: int) -> tuple[Lane, ...]:
        d = self.data_chips
        if slot == self.banks:
            return self._bank_lanes(self.banks - 1, row, range(1, d + 1))
        own = self._bank_lanes(slot, row, range(0, d - slot))
        borrowed = self._bank_lanes(slot - 1, row, range(d + 1 - slot, d + 1))
        return own + borrowed

    def _parity_side(self, page: int, cl: int) -> SideLane:
        bank = page % self.banks
        row_group = page // self.banks
        offset = (row_group % self.pages_per_parity_row) * self.lines_per_row + cl
        return SideLane(
            kind="parity",
            slice=SliceId(self.ecc_chip, (bank + self.banks // 2) % self.banks),
            row=row_group // self.pages_per_parity_row,
            column=offset // 8,
            byte=offset % 8,
        )

    def _extra_parity_side(self, extra: int, cl: int) -> SideLane:
        bank = cl // self.lines_per_bank
        offset = (extra % self.extra_pages_per_parity_row) * self.lines_per_bank + (
            cl % self.lines_per_bank
        )
        return SideLane(
            kind="parity",
            slice=SliceId(self.ecc_chip, (bank + self.banks // 2) % self.banks),
            row=self.parity_rows + extra // self.extra_pages_per_parity_row,
            column=offset // 8,
            byte=offset % 8,
        )

    def locate(self, line: int, cream_only: bool = False) -> Footprint:
        self._check_line(line)
        region = self.region_of(line)
        if region is Region.EXTRA:
            extra, cl = divmod(line - self.baseline_lines, self.lines_per_row)
            if self.mode is LayoutMode.INTER_WRAP:
                return Footprint(line, region, self._wrap_lanes(self.banks, extra), cl, 1)
            bank = cl // self.lines_per_bank
            row = self.extra_data_row + extra
            lane = Lane(SliceId(self.ecc_chip, bank), row)
            side = None
            if self.mode is LayoutMode.PARITY:
                side = self._extra_parity_side(extra, cl)
            column = (cl % self.lines_per_bank) * self.parts
            return Footprint(line, region, (lane,) * self.parts, column, self.parts, side)

        page, cl = divmod(line, self.lines_per_row)
        row, bank = divmod(page, self.banks)
        if region is Region.SECDED:
            if cream_only:
                raise AddressError(f"line {line:#x} lies in the SECDED region")
            lanes = self._bank_lanes(bank, row, range(self.data_chips))
            side = SideLane("ecc", SliceId(self.ecc_chip, bank), row, cl)
            return Footprint(line, region, lanes, cl, 1, side)
        if self.mode is LayoutMode.INTER_WRAP:
            return Footprint(line, region, self._wrap_lanes(bank, row), cl, 1)
        lanes = self._bank_lanes(bank, row, range(self.data_chips))
        side = self._parity_side(page, cl) if self.mode is LayoutMode.PARITY else None
        return Footprint(line, region, lanes, cl, 1, side)

    def translate_extra(self, line: int) -> tuple[int, ...]:
        if self.mode not in PACKED_FAMILY:
            raise LayoutError(f"extra-line translation applies to packed layouts, not {self.mode}")
        if line < self.baseline_lines:
            raise AddressError(f"line {line:#x} is below the extra region")
        self._check_line(line)
        base = (line - self.baseline_lines) * self.parts
        return tuple(base + j for j in range(self.parts))

    # -- device operations ----------------------------------------------------

    def _full_group(self, bank: int, row: int) -> tuple[Lane, ...]:
        return self._bank_lanes(bank, row, range(self.geometry.total_chips))

    def plan_access(self, line: int, rw: Rw) -> AccessPlan:
        footprint = self.locate(line)
        region = footprint.region
        mode = self.mode if region is not Region.SECDED else LayoutMode.BASELINE
        ops: list[DeviceOp] = []
        relaxed = None

        if mode is LayoutMode.BASELINE:
            bank, row = footprint.lanes[0].slice.bank, footprint.lanes[0].row
            ops.append(DeviceOp(rw, self._full_group(bank, row), footprint.column, OpRole.DATA))
        elif mode is LayoutMode.INTER_WRAP:
            group = tuple(sorted(footprint.lanes))
            ops.append(DeviceOp(rw, group, footprint.column, OpRole.DATA))
        elif region is Region.EXTRA:
            lane = footprint.lanes[0]
            columns = range(footprint.column, footprint.column + footprint.width)
            if mode is LayoutMode.PACKED:
                group = self._full_group(lane.slice.bank, lane.row)
                for column in columns:
                    if rw is Rw.READ:
                        ops.append(DeviceOp(rw, group, column, OpRole.DATA))
                    else:
                        read_index = len(ops)
                        ops.append(DeviceOp(Rw.READ, group, column, OpRole.ECC_SIDE))
                        ops.append(DeviceOp(Rw.WRITE, group, column, OpRole.DATA, read_index))
                relaxed = footprint.width
            else:
                for column in columns:
                    ops.append(DeviceOp(rw, (lane,), column, OpRole.DATA))
        else:
            bank, row = footprint.lanes[0].slice.bank, footprint.lanes[0].row
            if mode is LayoutMode.PACKED:
                group = self._full_group(bank, row)
                if rw is Rw.READ:
                    ops.append(DeviceOp(rw, group, footprint.column, OpRole.DATA))
                else:
                    ops.append(DeviceOp(Rw.READ, group, footprint.column, OpRole.ECC_SIDE))
                    ops.append(DeviceOp(Rw.WRITE, group, footprint.column, OpRole.DATA, 0))
            else:
                ops.append(DeviceOp(rw, footprint.lanes, footprint.column, OpRole.DATA))

        if mode is LayoutMode.PARITY:
            side = footprint.side
            parity = (Lane(side.slice, side.row),)
            read_index = len(ops)
            ops.append(DeviceOp(Rw.READ, parity, side.column, OpRole.PARITY_READ))
            if rw is Rw.WRITE:
                ops.append(DeviceOp(Rw.WRITE, parity, side.column, OpRole.PARITY_WRITE, read_index))

        staging = Staging.RMW if any(op.after is not None for op in ops) else Staging.NONE
        bridged = self.mode in BRIDGED_MODES and region is not Region.SECDED
        return AccessPlan(
            line=line,
            rw=rw,
            region=region,
            ops=tuple(ops),
            staging=staging,
            bridged=bridged,
            relaxed_op_count=len(ops) if relaxed is None else relaxed,
        )

    # -- oracle support -------------------------------------------------------

    def enumerate_footprints(self) -> Iterator[tuple[int, Footprint]]:
        if self.capacity_lines > ENUMERATION_LIMIT:
            raise LayoutError(
                f"{self.capacity_lines} lines exceed the enumeration guard {ENUMERATION_LIMIT}"
            )
        for line in range(self.capacity_lines):
            yield line, self.locate(line)

    def storage_bytes(self) -> int:
        geometry = self.geometry
        return (
            geometry.total_chips
            * geometry.banks
            * geometry.rows_per_bank
            * geometry.chip_row_bytes
        )

    def expected_vacant_bytes(self) -> int:
        """Bytes the mode leaves unused (only parity rounds up to whole rows)."""
        if self.mode is not LayoutMode.PARITY or self.row_groups == 0:
            return 0
        row_bytes = self.geometry.chip_row_bytes
        free_rows = self.row_groups - self.extra_data_row - self.extra_pages
        per_bank = (
            free_rows * row_bytes
            + (self.parity_rows * self.pages_per_parity_row - self.row_groups) * self.lines_per_row
            + (self.extra_parity_rows * self.extra_pages_per_parity_row - self.extra_pages)
            * self.lines_per_bank
        )
        return per_bank * self.banks


def claimed_bytes(footprint: Footprint) -> Iterator[tuple[int, int, int, int, int]]:
    """Every (chip, bank, row, column, byte) a footprint occupies."""
    for cell in footprint.cells():
        for byte in range(8):
            yield cell.slice.chip, cell.slice.bank, cell.row, cell.column, byte
    side = footprint.side
    if side is not None:
        side_bytes = range(8) if side.byte is None else (side.byte,)
        for byte in side_bytes:
            yield side.slice.chip, side.slice.bank, side.row, side.column, byte


@lru_cache(maxsize=64)
def get_layout(config: RegionConfig) -> Layout:
    return Layout(config)


def capacity_pages(config: RegionConfig) -> int:
    return get_layout(config).capacity_pages


def extra_pages(config: RegionConfig) -> int:
    return get_layout(config).extra_pages


def locate(config: RegionConfig, line: int, cream_only: bool = False) -> Footprint:
    return get_layout(config).locate(line, cream_only)


def ignored_chip(slot: int, geometry: ModuleGeometry | None = None) -> int:
    """Chip left out of wrap-around slot ``slot`` (slot == banks is the extra page)."""
    geometry = geometry or ModuleGeometry()
    if not 0 <= slot <= geometry.banks:
        raise LayoutError(f"slot {slot} outside 0..{geometry.banks}")
    return geometry.data_chips - slot


def translate_extra(config: RegionConfig, line: int) -> tuple[int, ...]:
    return get_layout(config).translate_extra(line)


def plan_access(config: RegionConfig, line: int, rw: Rw) -> AccessPlan:
    return get_layout(config).plan_access(line, rw)


def enumerate_footprints(config: RegionConfig) -> list[tuple[int, Footprint]]:
    return list(get_layout(config).enumerate_footprints())


def describe_footprint(footprint: Footprint) -> dict:
    described = {
        "line": footprint.line,
        "region": str(footprint.region),
        "column": footprint.column,
        "width": footprint.width,
        "lanes": [{"slice": str(lane.slice), "row": lane.row} for lane in footprint.lanes],
        "side": None,
    }
    if footprint.side is not None:
        side = footprint.side
        described["side"] = {
            "kind": side.kind,
            "slice": str(side.slice),
            "row": side.row,
            "column": side.column,
            "byte": side.byte,
        }
    return described


def describe_plan(plan: AccessPlan) -> dict:
    return {
        "line": plan.line,
        "rw": str(plan.rw),
        "region": str(plan.region),
        "staging": str(plan.staging),
        "bridged": plan.bridged,
        "ops": [
            {
                "rw": str(op.rw),
                "role": str(op.role),
                "column": op.column,
                "after": op.after,
                "group": [f"{lane.slice}r{lane.row}" for lane in op.group],
            }
            for op in plan.ops
        ],
    }
