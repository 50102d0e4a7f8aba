"""Virtual memory on top of the frames a layout exposes.

Replacement follows the Linux two-list scheme: a page enters at the head of
the inactive list, moves to the active list when referenced again, and is
demoted back when the active list outgrows ``active_ratio`` times the
inactive one. Victims come from the inactive tail.
"""

import heapq
from collections import OrderedDict
from dataclasses import dataclass
from typing import Annotated, Self

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from .errors import ConfigError
from .layout import RegionConfig, get_layout

type PageKey = tuple[int, int]  # (core id, virtual page)


class FaultModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    penalty_ns: Annotated[int | None, Field(ge=0)] = None
    ssd_ns: Annotated[int, Field(ge=0)] = 300_000
    software_ns: Annotated[int, Field(ge=0)] = 200_000

    @model_validator(mode="after")
    def penalty_is_sum(self) -> Self:
        total = self.ssd_ns + self.software_ns
        if self.penalty_ns is None:
            self.penalty_ns = total
        elif self.penalty_ns != total:
            raise ConfigError(
                f"penalty_ns {self.penalty_ns} must equal ssd_ns + software_ns ({total})"
            )
        return self

    def penalty_cycles(self, freq_ghz: float) -> int:
        return round(self.penalty_ns * freq_ghz)


@dataclass(frozen=True, slots=True)
class Hit:
    frame: int


@dataclass(frozen=True, slots=True)
class Fault:
    frame: int
    victim: PageKey | None = None


class FrameTable:
    def __init__(self, frames: int, active_ratio: float = 2.0):
        if frames < 1:
            raise ConfigError(f"need at least one frame, got {frames}")
        self.frames = frames
        self.active_ratio = active_ratio
        # insertion order runs tail -> head; the last key is the most recent
        self.active: OrderedDict[PageKey, int] = OrderedDict()
        self.inactive: OrderedDict[PageKey, int] = OrderedDict()
        self.free = list(range(frames))
        self.faults = 0
        self.hits = 0
        self.evictions = 0

    @property
    def resident(self) -> int:
        return len(self.active) + len(self.inactive)

    def frame_of(self, page: PageKey) -> int | None:
        frame = self.active.get(page)
        return frame if frame is not None else self.inactive.get(page)

    def access(self, page: PageKey) -> Hit | Fault:
        if page in self.active:
            self.active.move_to_end(page)
            self.hits += 1
            return Hit(self.active[page])
        if page in self.inactive:
            frame = self.inactive.pop(page)
            self.active[page] = frame
            self._balance()
            self.hits += 1
            return Hit(frame)

        victim = None
        if self.free:
            frame = heapq.heappop(self.free)
        else:
            victim, frame = self._evict()
        self.inactive[page] = frame
        self.faults += 1
        return Fault(frame, victim)

    def _balance(self) -> None:
        while len(self.active) > 1 and len(self.active) > self.active_ratio * len(self.inactive):
            page, frame = self.active.popitem(last=False)
            self.inactive[page] = frame

    def _evict(self) -> tuple[PageKey, int]:
        source = self.inactive if self.inactive else self.active
        page, frame = source.popitem(last=False)
        self.evictions += 1
        return page, frame

    def check(self) -> None:
        overlap = self.active.keys() & self.inactive.keys()
        if overlap:
            raise ConfigError(f"pages on both lists: {sorted(overlap)[:4]}")
        if self.resident + len(self.free) != self.frames:
            raise ConfigError(
                f"{self.resident} resident + {len(self.free)} free != {self.frames} frames"
            )


class PagedMemory:
    """Virtual line -> physical line, charging a stall on every fault."""

    def __init__(
        self,
        frames: int,
        lines_per_page: int,
        fault_model: FaultModel | None = None,
        freq_ghz: PositiveFloat = 2.6,
        active_ratio: float = 2.0,
    ):
        self.table = FrameTable(frames, active_ratio)
        self.lines_per_page = lines_per_page
        self.fault_model = fault_model or FaultModel()
        self.penalty = self.fault_model.penalty_cycles(freq_ghz)
        self.faults_per_core: dict[int, int] = {}
        logger.info(f"paging over {frames} frames, {self.penalty} core cycles per fault")

    @property
    def faults(self) -> int:
        return self.table.faults

    @property
    def resident(self) -> int:
        return self.table.resident

    def translate(self, core_id: int, vline: int) -> tuple[int, bool]:
        vpage, offset = divmod(vline, self.lines_per_page)
        result = self.table.access((core_id, vpage))
        line = result.frame * self.lines_per_page + offset
        if isinstance(result, Fault):
            self.faults_per_core[core_id] = self.faults_per_core.get(core_id, 0) + 1
            return line, True
        return line, False

    def charge_fault(self, core_id: int, now: int) -> int:
        """Core cycle at which a core that faulted at ``now`` resumes."""
        return now + self.penalty


class DirectMemory:
    """Paging off: virtual lines wrap modulo the physical capacity."""

    def __init__(self, capacity_lines: int):
        self.capacity_lines = capacity_lines
        self.faults = 0
        self.resident = 0
        self.faults_per_core: dict[int, int] = {}

    def translate(self, core_id: int, vline: int) -> tuple[int, bool]:
        return vline % self.capacity_lines, False

    def charge_fault(self, core_id: int, now: int) -> int:
        return now


def frames_for(config: RegionConfig) -> int:
    return get_layout(config).capacity_pages
