"""Physical shape and timing constants of the simulated ECC DIMM.

A *slice* is one (chip, bank) pair: the unit that owns a row buffer. Every
other module addresses storage in slices, rows and 8-byte columns.
"""

from typing import Annotated, NamedTuple

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt

from .errors import GeometryError

# Every configuration the simulator reproduces uses 8 data chips + 1 ECC chip.
TOTAL_CHIPS = 9


class SliceId(NamedTuple):
    chip: int
    bank: int

    def __str__(self) -> str:
        return f"c{self.chip}b{self.bank}"


class ModuleGeometry(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    data_chips: Annotated[int, Field(ge=0)] = 8
    ecc_chips: Annotated[int, Field(ge=0)] = 1
    banks: PositiveInt = 8
    rows_per_bank: PositiveInt = 16
    lines_per_row: PositiveInt = 64
    line_bytes: PositiveInt = 64
    chip_bytes_per_line: PositiveInt = 8
    bursts_per_line: PositiveInt = 8

    @property
    def total_chips(self) -> int:
        return self.data_chips + self.ecc_chips

    @property
    def ecc_chip(self) -> int:
        """Index of the chip that holds SECDED codes in the baseline layout."""
        return self.data_chips

    @property
    def baseline_pages(self) -> int:
        return self.banks * self.rows_per_bank

    @property
    def baseline_lines(self) -> int:
        return self.baseline_pages * self.lines_per_row

    @property
    def chip_row_bytes(self) -> int:
        return self.lines_per_row * self.chip_bytes_per_line

    @property
    def page_bytes(self) -> int:
        return self.lines_per_row * self.line_bytes


class TimingParams(BaseModel):
    """DDR3 timing table; everything except tCK is in memory clock cycles."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tCK: PositiveFloat = 1.5
    tRCD: PositiveInt = 9
    tRP: PositiveInt = 9
    tCL: PositiveInt = 9
    tCWL: PositiveInt = 7
    tRAS: PositiveInt = 24
    tRC: PositiveInt = 33
    tCCD: PositiveInt = 4
    tBURST: PositiveInt = 4
    tWR: PositiveInt = 10
    tWTR: PositiveInt = 5
    tRTP: PositiveInt = 5
    tRRD: PositiveInt = 4
    tFAW: PositiveInt = 20
    tREFI: PositiveInt = 5200
    tRFC: PositiveInt = 107
    bridge_delay: PositiveInt = 1


def ddr3_1333_defaults() -> TimingParams:
    """The pinned DDR3-1333H table (tCK = 1.5ns, one-cycle bridge)."""
    return TimingParams()


def validate(geometry: ModuleGeometry) -> list[str]:
    """Return every violated geometry invariant; an empty list means valid."""
    violations = []
    if geometry.data_chips * geometry.chip_bytes_per_line != geometry.line_bytes:
        violations.append(
            f"data_chips x chip_bytes_per_line must equal line_bytes "
            f"({geometry.data_chips}x{geometry.chip_bytes_per_line}"
            f"!={geometry.line_bytes})"
        )
    if geometry.ecc_chips < 1:
        violations.append("ecc_chips must be at least 1: the layouts reuse the ECC chip")
    if geometry.total_chips != TOTAL_CHIPS:
        violations.append(
            f"total chips must be {TOTAL_CHIPS}, got {geometry.total_chips}"
        )
    if geometry.line_bytes != 64:
        violations.append(f"line_bytes is fixed at 64, got {geometry.line_bytes}")
    if geometry.chip_bytes_per_line != 8:
        violations.append(
            f"chip_bytes_per_line is fixed at 8, got {geometry.chip_bytes_per_line}"
        )
    if geometry.bursts_per_line != 8:
        violations.append(f"bursts_per_line is fixed at 8, got {geometry.bursts_per_line}")
    return violations


def validate_timing(timing: TimingParams, geometry: ModuleGeometry) -> list[str]:
    violations = []
    if timing.tRC < timing.tRAS + timing.tRP:
        violations.append(
            f"tRC ({timing.tRC}) must be >= tRAS + tRP ({timing.tRAS + timing.tRP})"
        )
    if timing.tBURST * 2 != geometry.bursts_per_line:
        violations.append(
            f"tBURST ({timing.tBURST}) must be bursts_per_line / 2 "
            f"({geometry.bursts_per_line / 2:g}) for double data rate"
        )
    return violations


def check_geometry(geometry: ModuleGeometry, timing: TimingParams | None = None) -> None:
    violations = validate(geometry)
    if timing is not None:
        violations += validate_timing(timing, geometry)
    if violations:
        raise GeometryError("; ".join(violations))


def slice_count(geometry: ModuleGeometry) -> int:
    return geometry.total_chips * geometry.banks


def slice_index(slice_id: SliceId, geometry: ModuleGeometry) -> int:
    if not (0 <= slice_id.chip < geometry.total_chips and 0 <= slice_id.bank < geometry.banks):
        raise GeometryError(f"slice {slice_id} outside the module")
    return slice_id.chip * geometry.banks + slice_id.bank


def slice_from_index(index: int, geometry: ModuleGeometry) -> SliceId:
    if not 0 <= index < slice_count(geometry):
        raise GeometryError(f"slice index {index} outside the module")
    return SliceId(*divmod(index, geometry.banks))


def all_slices(geometry: ModuleGeometry) -> list[SliceId]:
    return [slice_from_index(i, geometry) for i in range(slice_count(geometry))]
