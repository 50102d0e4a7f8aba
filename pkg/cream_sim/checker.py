"""Replays a command log and reports every DDR timing violation.

Shares no state or code with the controller; the log is its only input.
"""

from collections import defaultdict, deque
from pathlib import Path
from typing import Iterable

from .engine import CommandEvent, CommandKind
from .errors import EngineError
from .geometry import ModuleGeometry, SliceId, TimingParams

NEVER = -(10**9)


class _Bank:
    __slots__ = ("row", "act", "pre", "rd", "wr", "ref_end")

    def __init__(self):
        self.row = None
        self.act = self.pre = self.rd = self.wr = NEVER
        self.ref_end = NEVER


def check_log(
    events: Iterable[CommandEvent],
    timing: TimingParams,
    geometry: ModuleGeometry | None = None,
) -> list[str]:
    geometry = geometry or ModuleGeometry()
    t = timing
    banks: dict[SliceId, _Bank] = defaultdict(_Bank)
    # data bursts already placed on each chip's lane
    bursts: dict[int, list[tuple[int, int]]] = defaultdict(list)
    last_column: dict[int, int] = defaultdict(lambda: NEVER)
    write_end: dict[int, int] = defaultdict(lambda: NEVER)
    acts: deque[int] = deque(maxlen=4)
    last_cycle = None
    violations = []

    def need(ok: bool, event: CommandEvent, what: str) -> None:
        if not ok:
            violations.append(f"cycle {event.cycle} {event.kind}: {what}")

    for event in events:
        now = event.cycle
        need(last_cycle is None or now > last_cycle, event, "command bus used twice")
        last_cycle = now
        for s in event.slices:
            need(
                0 <= s.chip < geometry.total_chips and 0 <= s.bank < geometry.banks,
                event,
                f"slice {s} outside the module",
            )
            need(now >= banks[s].ref_end, event, f"{s} still refreshing")

        if event.kind is CommandKind.ACT:
            if acts:
                need(now - acts[-1] >= t.tRRD, event, "tRRD")
            if len(acts) == 4:
                need(now - acts[0] >= t.tFAW, event, "tFAW")
            acts.append(now)
            for s in event.slices:
                bank = banks[s]
                need(bank.row is None, event, f"{s} already open")
                need(now - bank.pre >= t.tRP, event, f"tRP on {s}")
                need(now - bank.act >= t.tRC, event, f"tRC on {s}")
                bank.row = event.row
                bank.act = now

        elif event.kind is CommandKind.PRE:
            for s in event.slices:
                bank = banks[s]
                need(bank.row is not None, event, f"{s} already closed")
                need(now - bank.act >= t.tRAS, event, f"tRAS on {s}")
                need(now - bank.rd >= t.tRTP, event, f"tRTP on {s}")
                need(now - bank.wr >= t.tCWL + t.tBURST + t.tWR, event, f"tWR on {s}")
                bank.row = None
                bank.pre = now

        elif event.kind is CommandKind.REF:
            for s in event.slices:
                bank = banks[s]
                need(bank.row is None, event, f"{s} open during refresh")
                need(now - bank.pre >= t.tRP, event, f"tRP on {s}")
                bank.ref_end = now + t.tRFC

        else:
            is_read = event.kind is CommandKind.RD
            start = now + (t.tCL if is_read else t.tCWL)
            end = start + t.tBURST
            chips = set()
            for s in event.slices:
                bank = banks[s]
                need(bank.row == event.row, event, f"{s} not open at row {event.row}")
                need(now - bank.act >= t.tRCD, event, f"tRCD on {s}")
                if is_read:
                    bank.rd = now
                else:
                    bank.wr = now
                chips.add(s.chip)
            for chip in chips:
                need(now - last_column[chip] >= t.tCCD, event, f"tCCD on chip {chip}")
                if is_read:
                    need(start - t.tCL >= write_end[chip] + t.tWTR, event, f"tWTR on chip {chip}")
                for other_start, other_end in bursts[chip][-4:]:
                    need(end <= other_start or start >= other_end, event, f"lane clash on chip {chip}")
                bursts[chip].append((start, end))
                last_column[chip] = now
                if not is_read:
                    write_end[chip] = end
    return violations


def assert_legal(events: Iterable[CommandEvent], timing: TimingParams, geometry=None) -> None:
    violations = check_log(events, timing, geometry)
    if violations:
        raise EngineError(f"{len(violations)} timing violations, first: {violations[0]}")


def parse_log(path: Path) -> list[CommandEvent]:
    """Read back a log written by ``engine.write_command_log``."""
    events = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            cycle, kind, slices, row, column = line.split()
            ids = []
            for item in slices.split(","):
                chip, bank = item[1:].split("b")
                ids.append(SliceId(int(chip), int(bank)))
            events.append(
                CommandEvent(
                    cycle=int(cycle),
                    kind=CommandKind(kind),
                    slices=tuple(ids),
                    row=None if row == "-" else int(row),
                    column=None if column == "-" else int(column),
                )
            )
    return events
