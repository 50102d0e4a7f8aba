"""Cycle-level memory controller and DIMM timing model.

Every logical request is expanded by the layout into device operations; the
controller arbitrates those operations FR-FCFS style (row hits first, then
oldest parent request) and issues at most one command per memory cycle on the
shared command bus. Each chip owns an 8-bit data lane, so two bursts may
overlap only when their chip sets are disjoint.
"""

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Callable, Iterable

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PositiveInt

from .errors import EngineError
from .geometry import SliceId, TimingParams, slice_count, slice_from_index, slice_index
from .layout import AccessPlan, DeviceOp, Layout, Rw

NEVER = -(10**9)
FOREVER = 10**18


class CommandKind(StrEnum):
    ACT = "ACT"
    PRE = "PRE"
    RD = "RD"
    WR = "WR"
    REF = "REF"


class RowOutcome(StrEnum):
    HIT = "hit"
    MISS = "miss"
    CONFLICT = "conflict"


class ControllerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    read_queue: PositiveInt = 64
    write_queue: PositiveInt = 64
    refresh: bool = False
    command_log: bool = Field(default=False, description="keep every issued command")


@dataclass(frozen=True, slots=True)
class CommandEvent:
    cycle: int
    kind: CommandKind
    slices: tuple[SliceId, ...]
    row: int | None = None
    column: int | None = None

    def __str__(self) -> str:
        slices = ",".join(str(s) for s in self.slices)
        row = "-" if self.row is None else self.row
        column = "-" if self.column is None else self.column
        return f"{self.cycle} {self.kind} {slices} {row} {column}"


@dataclass(slots=True)
class SliceState:
    slice: SliceId
    row_open: int | None = None
    busy_until: int = 0
    last_act: int = NEVER
    last_read: int = NEVER
    last_write: int = NEVER
    last_pre: int = NEVER


@dataclass(slots=True, eq=False)
class OpState:
    request: "PendingRequest"
    index: int
    op: DeviceOp
    slices: tuple[int, ...]
    chips: tuple[int, ...]
    row: int
    ready_at: int = 0
    started: bool = False
    issued_at: int | None = None
    done_at: int | None = None
    outcome: RowOutcome | None = None


@dataclass(slots=True, eq=False)
class PendingRequest:
    id: int
    core_id: int
    arrival: int
    rw: Rw
    line: int
    plan: AccessPlan
    on_complete: Callable[[int], None] | None = None
    ops: list[OpState] = field(default_factory=list)
    ops_issued: int = 0
    ops_done: int = 0
    completion: int | None = None


class MemoryMetrics(BaseModel):
    cycles: int = 0
    reads: int = 0
    writes: int = 0
    requests: int = 0
    device_ops: int = 0
    device_ops_relaxed: int = 0
    ops_per_request: float = 0.0
    rmw_requests: int = 0
    row_hits: int = 0
    row_misses: int = 0
    row_conflicts: int = 0
    row_hit_rate: float = 0.0
    busy_cycles: int = 0
    mean_concurrency: float = 0.0
    peak_concurrency: int = 0
    refreshes: int = 0
    mean_read_latency: float = 0.0
    served_per_core: dict[int, int] = Field(default_factory=dict)


class Controller:
    """One channel, one rank; drives the layout's device operations."""

    def __init__(
        self,
        layout: Layout,
        timing: TimingParams,
        settings: ControllerSettings | None = None,
    ):
        self.layout = layout
        self.timing = timing
        self.settings = settings or ControllerSettings()
        self.geometry = layout.geometry
        self.cycle = 0

        n_slices = slice_count(self.geometry)
        self.slices = [SliceState(slice_from_index(i, self.geometry)) for i in range(n_slices)]
        n_chips = self.geometry.total_chips
        self.lane_free = [0] * n_chips
        self.chip_last_column = [NEVER] * n_chips
        self.chip_write_end = [NEVER] * n_chips
        self.act_window: deque[int] = deque(maxlen=4)
        self.last_act_rank = NEVER
        self.next_refresh = timing.tREFI if self.settings.refresh else FOREVER
        self.refresh_pending = False
        self.refreshes = 0

        self.reads: list[PendingRequest] = []
        self.writes: list[PendingRequest] = []
        self.waiting: list[OpState] = []
        self.inflight: set[OpState] = set()
        self._events: list[tuple[int, int, object]] = []
        self._seq = 0
        self._next_id = 0
        self.log: list[CommandEvent] | None = [] if self.settings.command_log else None

        self.injected = 0
        self.planned_ops = 0
        self.completed = 0
        self.ops_done = 0
        self.ops_relaxed = 0
        self.completed_reads = 0
        self.completed_writes = 0
        self.rmw_requests = 0
        self.outcomes = {outcome: 0 for outcome in RowOutcome}
        self.read_latency_sum = 0
        self.busy_cycles = 0
        self.concurrency_sum = 0
        self.peak_concurrency = 0
        self.served: dict[int, int] = {}
        logger.debug(f"controller for the {layout.mode} layout over {n_slices} slices")

    # -- request intake -------------------------------------------------------

    def enqueue(
        self,
        core_id: int,
        rw: Rw,
        line: int,
        on_complete: Callable[[int], None] | None = None,
    ) -> bool:
        queue = self.reads if rw is Rw.READ else self.writes
        limit = self.settings.read_queue if rw is Rw.READ else self.settings.write_queue
        if len(queue) >= limit:
            return False
        plan = self.layout.plan_access(line, rw)
        request = PendingRequest(
            id=self._next_id,
            core_id=core_id,
            arrival=self.cycle,
            rw=rw,
            line=line,
            plan=plan,
            on_complete=on_complete,
        )
        self._next_id += 1
        for index, op in enumerate(plan.ops):
            rows = {lane.row for lane in op.group}
            if len(rows) != 1:
                raise EngineError(f"op {index} of line {line:#x} spans rows {sorted(rows)}")
            slices = tuple(slice_index(s, self.geometry) for s in op.slices)
            state = OpState(
                request=request,
                index=index,
                op=op,
                slices=slices,
                chips=tuple(sorted({s.chip for s in op.slices})),
                row=rows.pop(),
                ready_at=self.cycle if op.after is None else FOREVER,
            )
            request.ops.append(state)
            self.waiting.append(state)
        queue.append(request)
        self.injected += 1
        self.planned_ops += len(plan.ops)
        if plan.staging == "rmw":
            self.rmw_requests += 1
        return True

    def idle(self) -> bool:
        return not self.reads and not self.writes and not self._events

    def quiet_until(self) -> int:
        """Cycle up to which an idle controller can be skipped."""
        return self.next_refresh

    def skip_to(self, cycle: int) -> None:
        if not self.idle():
            raise EngineError("cannot skip cycles with requests in flight")
        self.cycle = max(self.cycle, min(cycle, self.quiet_until()))

    # -- timing legality ------------------------------------------------------

    def _earliest(self, kind: CommandKind, slices: Iterable[int], row: int | None) -> int:
        t = self.timing
        earliest = 0
        if kind is CommandKind.ACT:
            earliest = self.last_act_rank + t.tRRD
            if len(self.act_window) == 4:
                earliest = max(earliest, self.act_window[0] + t.tFAW)
        chips = set()
        for index in slices:
            s = self.slices[index]
            earliest = max(earliest, s.busy_until)
            if kind is CommandKind.ACT:
                if s.row_open is not None:
                    raise EngineError(f"ACT to open slice {s.slice}")
                earliest = max(earliest, s.last_pre + t.tRP, s.last_act + t.tRC)
            elif kind is CommandKind.PRE:
                if s.row_open is None:
                    raise EngineError(f"PRE to closed slice {s.slice}")
                earliest = max(
                    earliest,
                    s.last_act + t.tRAS,
                    s.last_read + t.tRTP,
                    s.last_write + t.tCWL + t.tBURST + t.tWR,
                )
            elif kind is CommandKind.REF:
                if s.row_open is not None:
                    raise EngineError(f"REF with open slice {s.slice}")
                earliest = max(earliest, s.last_pre + t.tRP, s.last_act + t.tRC)
            else:
                if s.row_open != row:
                    raise EngineError(f"{kind} to {s.slice} without row {row} open")
                earliest = max(earliest, s.last_act + t.tRCD)
                chips.add(s.slice.chip)
        for chip in chips:
            earliest = max(earliest, self.chip_last_column[chip] + t.tCCD)
            if kind is CommandKind.RD:
                earliest = max(
                    earliest,
                    self.chip_write_end[chip] + t.tWTR,
                    self.lane_free[chip] - t.tCL,
                )
            else:
                earliest = max(earliest, self.lane_free[chip] - t.tCWL)
        return earliest

    def _row_state_allows(self, kind: CommandKind, slices: list[int], row: int | None) -> bool:
        rows = [self.slices[index].row_open for index in slices]
        if kind is CommandKind.ACT or kind is CommandKind.REF:
            return all(r is None for r in rows)
        if kind is CommandKind.PRE:
            return all(r is not None for r in rows)
        return all(r == row for r in rows)

    def can_issue(self, cmd: CommandEvent) -> bool | int:
        """True when ``cmd`` is legal at its cycle, otherwise the cycle it unblocks.

        A command the current row state rules out (a column access to a row
        that is not open, an ACT to an open slice) never unblocks by waiting
        and gets ``FOREVER``.
        """
        slices = [slice_index(s, self.geometry) for s in cmd.slices]
        if not self._row_state_allows(cmd.kind, slices, cmd.row):
            return FOREVER
        earliest = self._earliest(cmd.kind, slices, cmd.row)
        return True if earliest <= cmd.cycle else earliest

    # -- scheduling -------------------------------------------------------------

    def _next_command(self, op: OpState) -> tuple[CommandKind, tuple[int, ...]]:
        conflicting = []
        closed = []
        for index in op.slices:
            row_open = self.slices[index].row_open
            if row_open is None:
                closed.append(index)
            elif row_open != op.row:
                conflicting.append(index)
        if conflicting:
            return CommandKind.PRE, tuple(conflicting)
        if closed:
            return CommandKind.ACT, tuple(closed)
        column = CommandKind.RD if op.op.rw is Rw.READ else CommandKind.WR
        return column, op.slices

    def schedule(self, now: int) -> tuple[OpState, CommandKind, tuple[int, ...]] | None:
        """FR-FCFS: oldest legal row hit, else oldest legal ACT/PRE."""
        fallback = None
        claimed: dict[int, int] = {}
        for op in self.waiting:
            if op.ready_at <= now:
                kind, slices = self._next_command(op)
                if kind is CommandKind.RD or kind is CommandKind.WR:
                    if self._earliest(kind, slices, op.row) <= now:
                        return op, kind, slices
                elif fallback is None:
                    # never close a row an older, already started request still needs
                    blocked = kind is CommandKind.PRE and any(
                        claimed.get(index) == self.slices[index].row_open for index in slices
                    )
                    if not blocked and self._earliest(kind, slices, op.row) <= now:
                        fallback = op, kind, slices
            if op.request.ops_issued:
                for index in op.slices:
                    claimed.setdefault(index, op.row)
        return fallback

    def _schedule_refresh(self, now: int) -> tuple[CommandKind, tuple[int, ...]] | None:
        open_slices = tuple(i for i, s in enumerate(self.slices) if s.row_open is not None)
        if open_slices:
            if self._earliest(CommandKind.PRE, open_slices, None) <= now:
                return CommandKind.PRE, open_slices
            return None
        every = tuple(range(len(self.slices)))
        if self._earliest(CommandKind.REF, every, None) <= now:
            return CommandKind.REF, every
        return None

    # -- command issue ----------------------------------------------------------

    def _push(self, when: int, item: object) -> None:
        heapq.heappush(self._events, (when, self._seq, item))
        self._seq += 1

    def _record(self, kind: CommandKind, slices: tuple[int, ...], row, column) -> None:
        if self.log is not None:
            ids = tuple(self.slices[i].slice for i in slices)
            self.log.append(CommandEvent(self.cycle, kind, ids, row, column))

    def _issue_bank_command(self, kind: CommandKind, slices: tuple[int, ...], row: int | None):
        now = self.cycle
        if kind is CommandKind.ACT:
            for index in slices:
                s = self.slices[index]
                s.row_open = row
                s.last_act = now
            self.act_window.append(now)
            self.last_act_rank = now
        elif kind is CommandKind.PRE:
            for index in slices:
                s = self.slices[index]
                s.row_open = None
                s.last_pre = now
        elif kind is CommandKind.REF:
            for s in self.slices:
                s.busy_until = now + self.timing.tRFC
            self.refreshes += 1
            self.next_refresh += self.timing.tREFI
            self.refresh_pending = False
        self._record(kind, slices, row, None)

    def _issue(self, op: OpState, kind: CommandKind, slices: tuple[int, ...]) -> None:
        now = self.cycle
        t = self.timing
        if op.outcome is None:
            if kind is CommandKind.PRE:
                op.outcome = RowOutcome.CONFLICT
            elif kind is CommandKind.ACT:
                op.outcome = RowOutcome.MISS
            else:
                op.outcome = RowOutcome.HIT
            self.outcomes[op.outcome] += 1
        if not op.started:
            op.started = True
            op.request.ops_issued += 1
            self.inflight.add(op)
        if kind is CommandKind.ACT or kind is CommandKind.PRE:
            self._issue_bank_command(kind, slices, op.row)
            return

        if op.op.after is not None:
            staged = op.request.ops[op.op.after]
            if staged.done_at is None or now < staged.done_at + t.bridge_delay:
                raise EngineError(
                    f"write leg {op.index} of request {op.request.id} issued before its read leg"
                )
        if kind is CommandKind.RD:
            data_end = now + t.tCL + t.tBURST
            for index in slices:
                self.slices[index].last_read = now
        else:
            data_end = now + t.tCWL + t.tBURST
            for index in slices:
                self.slices[index].last_write = now
        for chip in op.chips:
            self.chip_last_column[chip] = now
            self.lane_free[chip] = data_end
            if kind is CommandKind.WR:
                self.chip_write_end[chip] = data_end
        op.issued_at = now
        self.waiting.remove(op)
        self._push(data_end, op)
        self._record(kind, slices, op.row, op.op.column)

    # -- completion -------------------------------------------------------------

    def _retire(self, now: int) -> None:
        while self._events and self._events[0][0] <= now:
            when, _, item = heapq.heappop(self._events)
            if isinstance(item, PendingRequest):
                self._complete(item, when)
                continue
            op = item
            op.done_at = when
            self.inflight.discard(op)
            request = op.request
            request.ops_done += 1
            self.ops_done += 1
            for other in request.ops:
                if other.op.after == op.index:
                    other.ready_at = when + self.timing.bridge_delay
            if request.ops_done == len(request.ops):
                finish = when
                if request.plan.bridged and request.rw is Rw.READ:
                    finish += self.timing.bridge_delay
                if finish <= now:
                    self._complete(request, finish)
                else:
                    self._push(finish, request)

    def _complete(self, request: PendingRequest, when: int) -> None:
        request.completion = when
        self.completed += 1
        self.ops_relaxed += request.plan.relaxed_op_count
        self.served[request.core_id] = self.served.get(request.core_id, 0) + 1
        if request.rw is Rw.READ:
            self.reads.remove(request)
            self.completed_reads += 1
            self.read_latency_sum += when - request.arrival
        else:
            self.writes.remove(request)
            self.completed_writes += 1
        if request.on_complete is not None:
            request.on_complete(when)

    # -- clock ----------------------------------------------------------------

    def tick(self) -> None:
        now = self.cycle
        self._retire(now)
        if now >= self.next_refresh:
            self.refresh_pending = True
        if self.refresh_pending:
            choice = self._schedule_refresh(now)
            if choice is not None:
                self._issue_bank_command(*choice, None)
        elif self.waiting:
            choice = self.schedule(now)
            if choice is not None:
                self._issue(*choice)
        if self.inflight:
            concurrency = len({op.slices for op in self.inflight})
            self.busy_cycles += 1
            self.concurrency_sum += concurrency
            if concurrency > self.peak_concurrency:
                self.peak_concurrency = concurrency
        self.cycle = now + 1

    def drain(self, limit: int = 10**7) -> None:
        """Tick until every queued request has completed."""
        stop = self.cycle + limit
        while not self.idle():
            if self.cycle >= stop:
                raise EngineError(f"controller did not drain within {limit} cycles")
            self.tick()

    # -- reporting ------------------------------------------------------------

    def check_conservation(self) -> None:
        if self.completed != self.injected:
            raise EngineError(f"{self.injected} requests injected, {self.completed} completed")
        if self.ops_done != self.planned_ops:
            raise EngineError(f"{self.planned_ops} ops planned, {self.ops_done} completed")

    def metrics(self) -> MemoryMetrics:
        row_total = sum(self.outcomes.values())
        return MemoryMetrics(
            cycles=self.cycle,
            reads=self.completed_reads,
            writes=self.completed_writes,
            requests=self.completed,
            device_ops=self.ops_done,
            device_ops_relaxed=self.ops_relaxed,
            ops_per_request=self.ops_done / self.completed if self.completed else 0.0,
            rmw_requests=self.rmw_requests,
            row_hits=self.outcomes[RowOutcome.HIT],
            row_misses=self.outcomes[RowOutcome.MISS],
            row_conflicts=self.outcomes[RowOutcome.CONFLICT],
            row_hit_rate=self.outcomes[RowOutcome.HIT] / row_total if row_total else 0.0,
            busy_cycles=self.busy_cycles,
            mean_concurrency=(
                self.concurrency_sum / self.busy_cycles if self.busy_cycles else 0.0
            ),
            peak_concurrency=self.peak_concurrency,
            refreshes=self.refreshes,
            mean_read_latency=(
                self.read_latency_sum / self.completed_reads if self.completed_reads else 0.0
            ),
            served_per_core=dict(sorted(self.served.items())),
        )


def write_command_log(events: Iterable[CommandEvent], path: Path) -> None:
    with open(path, "w") as f:
        for event in events:
            f.write(f"{event}\n")
