"""Per-core request streams: traces, synthetic generators and the core model.

Trace format, one memory request per line::

    <bubbles> <R|W> <hex byte address>

``bubbles`` counts the non-memory instructions before the request. A line
holding only ``<bubbles>`` is pure compute. Blank lines and ``#`` comments are
skipped. Traces are post-cache: every request goes to DRAM.
"""

from bisect import bisect_right
from collections import deque
from dataclasses import dataclass
from decimal import Decimal, localcontext
from enum import StrEnum
from fractions import Fraction
from itertools import accumulate
from math import ceil
from pathlib import Path
from typing import Annotated, Callable, Iterable, Iterator, Literal, Self, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from .errors import ConfigError, TraceFormatError
from .layout import Rw

LINE_BYTES = 64
PAGE_BYTES = 4096
MPKI_THRESHOLD = 10
WEIGHT_SCALE = 2**32

type GeneratorKind = Annotated[
    Literal["uniform", "zipf", "kv", "stride"], "synthetic access pattern"
]


class Intensity(StrEnum):
    INTENSIVE = "intensive"
    NON_INTENSIVE = "non-intensive"


@dataclass(frozen=True, slots=True)
class TraceEntry:
    bubbles: int
    rw: Rw | None
    vaddr: int = 0

    @property
    def line(self) -> int:
        return self.vaddr // LINE_BYTES

    def __str__(self) -> str:
        if self.rw is None:
            return str(self.bubbles)
        return f"{self.bubbles} {self.rw} 0x{self.vaddr:X}"


def _parse_line(text: str, line_no: int) -> TraceEntry | None:
    text = text.split("#", 1)[0].strip()
    if not text:
        return None
    fields = text.split()
    if len(fields) not in (1, 3):
        raise TraceFormatError(f"expected '<bubbles> <R|W> <addr>', got {text!r}", line_no)
    try:
        bubbles = int(fields[0])
    except ValueError:
        raise TraceFormatError(f"bubble count {fields[0]!r} is not an integer", line_no)
    if bubbles < 0:
        raise TraceFormatError(f"bubble count {bubbles} is negative", line_no)
    if len(fields) == 1:
        return TraceEntry(bubbles, None)
    try:
        rw = Rw(fields[1].upper())
    except ValueError:
        raise TraceFormatError(f"access type {fields[1]!r} is not R or W", line_no)
    try:
        vaddr = int(fields[2], 16)
    except ValueError:
        raise TraceFormatError(f"address {fields[2]!r} is not hexadecimal", line_no)
    if vaddr < 0:
        raise TraceFormatError(f"address {fields[2]!r} is negative", line_no)
    # normalize to the start of the cache line
    return TraceEntry(bubbles, rw, vaddr - vaddr % LINE_BYTES)


def parse_trace(source: Path | str | Iterable[str]) -> Iterator[TraceEntry]:
    """Lazily yield entries from a trace file path or an iterable of lines."""
    if isinstance(source, (str, Path)):
        with open(source) as f:
            yield from parse_trace(f)
        return
    for line_no, text in enumerate(source, start=1):
        entry = _parse_line(text, line_no)
        if entry is not None:
            yield entry


def load_trace(source: Path | str | Iterable[str]) -> list[TraceEntry]:
    return list(parse_trace(source))


def write_trace(entries: Iterable[TraceEntry], path: Path) -> None:
    with open(path, "w") as f:
        for entry in entries:
            f.write(f"{entry}\n")


# -- synthetic generation ------------------------------------------------------


class GeneratorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: GeneratorKind = "uniform"
    n_ops: PositiveInt = 10_000
    page_span: PositiveInt = 64
    base_page: Annotated[int, Field(ge=0)] = 0
    page_stride: PositiveInt = 1
    read_fraction: Annotated[float | None, Field(ge=0.0, le=1.0)] = None
    bubbles: Annotated[int, Field(ge=0)] = 0
    mpki: Annotated[float | None, Field(gt=0.0, le=1000.0)] = None
    zipf_exponent: Annotated[float, Field(ge=0.0)] = 0.99
    value_lines: PositiveInt = 1
    page_bytes: PositiveInt = PAGE_BYTES
    seed: int | None = None

    @model_validator(mode="after")
    def check_kind(self) -> Self:
        if self.kind == "zipf" and self.zipf_exponent <= 0:
            raise ConfigError("zipf exponent must be > 0")
        if self.page_bytes % LINE_BYTES:
            raise ConfigError(f"page_bytes {self.page_bytes} is not a whole number of lines")
        if self.value_lines > self.lines_per_page:
            raise ConfigError(
                f"value_lines {self.value_lines} exceed the {self.lines_per_page} lines of a page"
            )
        return self

    @property
    def lines_per_page(self) -> int:
        return self.page_bytes // LINE_BYTES

    @property
    def reads(self) -> float:
        if self.read_fraction is not None:
            return self.read_fraction
        return 0.95 if self.kind == "kv" else 1.0

    @property
    def bubbles_per_op(self) -> int:
        if self.mpki is None:
            return self.bubbles
        return max(0, round(1000 / self.mpki) - 1)

    def pages(self) -> list[int]:
        """Virtual pages the generator may touch."""
        return [self.base_page + i * self.page_stride for i in range(self.page_span)]


def zipf_cdf(n: int, exponent: float) -> list[int]:
    """Integer cumulative zipf weights over ranks 1..n.

    Computed in decimal arithmetic: bit-exact on every platform.
    """
    with localcontext() as ctx:
        ctx.prec = 40
        scale = Decimal(WEIGHT_SCALE)
        power = Decimal(str(exponent))
        weights = [max(1, int(scale / Decimal(k) ** power)) for k in range(1, n + 1)]
    return list(accumulate(weights))


def _draw_ranks(rng: np.random.Generator, cdf: list[int], n: int) -> list[int]:
    total = cdf[-1]
    draws = rng.integers(0, total, size=n, dtype=np.int64)
    return [bisect_right(cdf, int(d)) for d in draws]


def gen_trace(spec: GeneratorSpec, seed: int | None = None) -> list[TraceEntry]:
    """Deterministic synthetic trace; ``seed`` overrides ``spec.seed``."""
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    pages = spec.pages()
    lines = spec.lines_per_page
    bubbles = spec.bubbles_per_op
    read_threshold = round(spec.reads * WEIGHT_SCALE)
    n = spec.n_ops

    def address(page: int, line: int) -> int:
        return page * spec.page_bytes + line * LINE_BYTES

    def rw_draws(count: int) -> list[Rw]:
        draws = rng.integers(0, WEIGHT_SCALE, size=count, dtype=np.int64)
        return [Rw.READ if int(d) < read_threshold else Rw.WRITE for d in draws]

    if spec.kind == "stride":
        rws = rw_draws(n)
        entries = []
        for i in range(n):
            page, line = divmod(i % (len(pages) * lines), lines)
            entries.append(TraceEntry(bubbles, rws[i], address(pages[page], line)))
        return entries

    if spec.kind == "uniform":
        picks = [int(p) for p in rng.integers(0, len(pages), size=n, dtype=np.int64)]
    else:
        # hot ranks are scattered over the span so they do not share one bank
        order = [int(p) for p in rng.permutation(len(pages))]
        cdf = zipf_cdf(len(pages), spec.zipf_exponent)
        picks = [order[r] for r in _draw_ranks(rng, cdf, n)]

    if spec.kind == "kv":
        n_values = ceil(n / spec.value_lines)
        starts = rng.integers(0, lines, size=n_values, dtype=np.int64)
        rws = rw_draws(n_values)
        entries = []
        for v in range(n_values):
            page = pages[picks[v]]
            for j in range(spec.value_lines):
                if len(entries) == n:
                    break
                line = (int(starts[v]) + j) % lines
                entries.append(TraceEntry(bubbles, rws[v], address(page, line)))
        return entries

    offsets = rng.integers(0, lines, size=n, dtype=np.int64)
    rws = rw_draws(n)
    return [
        TraceEntry(bubbles, rws[i], address(pages[picks[i]], int(offsets[i]))) for i in range(n)
    ]


# -- classification ------------------------------------------------------------


def mpki(trace: Sequence[TraceEntry], window: int | None = None) -> float:
    if not trace:
        raise ValueError("cannot classify an empty trace")
    entries = trace[:window] if window else trace
    mem_ops = sum(1 for e in entries if e.rw is not None)
    instructions = mem_ops + sum(e.bubbles for e in entries)
    return 1000 * mem_ops / instructions if instructions else 0.0


def classify_mpki(trace: Sequence[TraceEntry], window: int | None = None) -> Intensity:
    if mpki(trace, window) > MPKI_THRESHOLD:
        return Intensity.INTENSIVE
    return Intensity.NON_INTENSIVE


def working_set(traces: Sequence[Sequence[TraceEntry]], page_bytes: int = PAGE_BYTES) -> int:
    """Distinct (core, virtual page) pairs touched by a set of per-core traces."""
    return sum(
        len({e.vaddr // page_bytes for e in trace if e.rw is not None}) for trace in traces
    )


# -- core model ----------------------------------------------------------------


class CoreModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    retire_width: PositiveInt = 4
    rob_entries: PositiveInt = 128
    max_inflight_loads: PositiveInt = 16
    freq_ghz: PositiveFloat = 2.6


@dataclass(slots=True)
class CoreStats:
    core_id: int
    instructions: int
    cycles: int
    ipc: float
    loads: int
    stores: int
    faults: int
    wraps: int


class MemorySystem:
    """Controller, address translation and the core/memory clock crossing."""

    def __init__(self, controller, memory, freq_ghz: float, interval_cycles: int | None = None):
        self.controller = controller
        self.memory = memory
        # core cycles per memory cycle, kept exact (1.5ns x 2.6GHz = 39/10)
        ratio = Fraction(str(controller.timing.tCK)) * Fraction(str(freq_ghz))
        self.num = ratio.numerator
        self.den = ratio.denominator
        self.interval_cycles = interval_cycles
        self.next_sample = interval_cycles or 0
        self.samples: list[dict] = []
        self._last = {"requests": 0, "device_ops": 0, "row_hits": 0, "faults": 0}
        self._last_busy = (0, 0)

    def to_core(self, mem_cycle: int) -> int:
        return -(-mem_cycle * self.num // self.den)

    def to_memory(self, core_cycle: int) -> int:
        return core_cycle * self.den // self.num

    def translate(self, core_id: int, vline: int) -> tuple[int, bool]:
        return self.memory.translate(core_id, vline)

    def enqueue(self, core_id: int, rw: Rw, line: int, on_complete=None) -> bool:
        return self.controller.enqueue(core_id, rw, line, on_complete)

    def idle(self) -> bool:
        return self.controller.idle()

    def advance(self, core_now: int) -> None:
        """Tick memory through every cycle that starts at or before ``core_now``."""
        controller = self.controller
        while controller.cycle * self.num <= core_now * self.den:
            controller.tick()
            if self.interval_cycles and controller.cycle >= self.next_sample:
                self._sample()

    def skip(self, core_target: int) -> int:
        """Jump an idle memory forward; returns the core cycle actually reached."""
        self.controller.skip_to(self.to_memory(core_target))
        if self.interval_cycles and self.controller.cycle >= self.next_sample:
            self._sample()
        return min(core_target, self.to_core(self.controller.cycle))

    def _sample(self) -> None:
        c = self.controller
        current = {
            "requests": c.completed,
            "device_ops": c.ops_done,
            "row_hits": c.outcomes["hit"],
            "faults": self.memory.faults,
        }
        busy = c.busy_cycles - self._last_busy[0]
        conc = c.concurrency_sum - self._last_busy[1]
        row = {"cycle": self.next_sample}
        row |= {key: current[key] - self._last[key] for key in current}
        row["resident_pages"] = self.memory.resident
        row["mean_concurrency"] = round(conc / busy, 6) if busy else 0.0
        self.samples.append(row)
        self._last = current
        self._last_busy = (c.busy_cycles, c.concurrency_sum)
        while self.next_sample <= c.cycle:
            self.next_sample += self.interval_cycles


class _Load:
    __slots__ = ("ready_at",)

    def __init__(self):
        self.ready_at = None


class Core:
    """ROB-window core: bubbles retire in order, loads wait for their data."""

    def __init__(
        self,
        core_id: int,
        model: CoreModel,
        trace: Sequence[TraceEntry],
        system: MemorySystem,
        budget: int,
    ):
        if not trace:
            raise ConfigError(f"core {core_id} has an empty trace")
        if not any(entry.rw is not None or entry.bubbles for entry in trace):
            raise ConfigError(f"core {core_id} trace has no instructions to retire")
        self.core_id = core_id
        self.model = model
        self.trace = trace
        self.system = system
        self.budget = budget
        self.window: deque[_Load | None] = deque()
        self.pos = 0
        self.bubbles_left = trace[0].bubbles
        self.pending_line: int | None = None
        self.stall_until = 0
        self.inflight_loads = 0
        self.retired = 0
        self.finished_at: int | None = None
        self.loads = 0
        self.stores = 0
        self.faults = 0
        self.wraps = 0

    @property
    def done(self) -> bool:
        return self.finished_at is not None

    def _advance(self) -> None:
        self.pos += 1
        if self.pos == len(self.trace):
            self.pos = 0
            if not self.wraps:
                logger.warning(f"core {self.core_id} trace exhausted, wrapping around")
            self.wraps += 1
        self.bubbles_left = self.trace[self.pos].bubbles

    def _load_done(self, load: _Load) -> Callable[[int], None]:
        def done(mem_cycle: int) -> None:
            load.ready_at = self.system.to_core(mem_cycle)
            self.inflight_loads -= 1

        return done

    def _fill(self, now: int) -> None:
        if now < self.stall_until:
            return
        model = self.model
        window = self.window
        inserted = 0
        while inserted < model.retire_width and len(window) < model.rob_entries:
            if self.bubbles_left:
                window.append(None)
                self.bubbles_left -= 1
                inserted += 1
                continue
            entry = self.trace[self.pos]
            if entry.rw is None:
                self._advance()
                continue
            if self.pending_line is None:
                line, faulted = self.system.translate(self.core_id, entry.line)
                self.pending_line = line
                if faulted:
                    self.faults += 1
                    self.stall_until = self.system.memory.charge_fault(self.core_id, now)
                    if now < self.stall_until:
                        return
            if entry.rw is Rw.READ:
                if self.inflight_loads >= model.max_inflight_loads:
                    break
                load = _Load()
                if not self.system.enqueue(
                    self.core_id, Rw.READ, self.pending_line, self._load_done(load)
                ):
                    break
                self.inflight_loads += 1
                self.loads += 1
                window.append(load)
            else:
                if not self.system.enqueue(self.core_id, Rw.WRITE, self.pending_line):
                    break
                self.stores += 1
                window.append(None)
            inserted += 1
            self.pending_line = None
            self._advance()

    def _retire(self, now: int) -> None:
        window = self.window
        retired = 0
        while retired < self.model.retire_width and window:
            head = window[0]
            if head is not None and (head.ready_at is None or head.ready_at > now):
                break
            window.popleft()
            retired += 1
        self.retired += retired
        if self.finished_at is None and self.retired >= self.budget:
            self.finished_at = now + 1

    def step(self, now: int) -> None:
        self._fill(now)
        self._retire(now)

    def stats(self) -> CoreStats:
        cycles = self.finished_at or 0
        return CoreStats(
            core_id=self.core_id,
            instructions=self.budget,
            cycles=cycles,
            ipc=self.budget / cycles if cycles else 0.0,
            loads=self.loads,
            stores=self.stores,
            faults=self.faults,
            wraps=self.wraps,
        )


def drive(cores: Sequence[Core], system: MemorySystem, limit: int | None = None) -> int:
    """Run every core until the slowest reaches its budget; returns core cycles."""
    now = 0
    while not all(core.done for core in cores):
        if limit is not None and now >= limit:
            raise ConfigError(f"cores did not reach their budget within {limit} cycles")
        system.advance(now)
        for core in cores:
            core.step(now)
        now += 1
        if system.idle() and all(now < core.stall_until and not core.window for core in cores):
            now = max(now, system.skip(min(core.stall_until for core in cores)))
    return now


def run_core(
    model: CoreModel,
    trace: Sequence[TraceEntry],
    system: MemorySystem,
    budget: int,
    core_id: int = 0,
) -> CoreStats:
    core = Core(core_id, model, trace, system, budget)
    drive([core], system)
    return core.stats()


def weighted_speedup(shared: Sequence[float], alone: Sequence[float]) -> float:
    if len(shared) != len(alone):
        raise ValueError(f"{len(shared)} shared IPCs but {len(alone)} alone IPCs")
    for core_id, ipc in enumerate(alone):
        if ipc <= 0:
            raise ValueError(f"core {core_id} has non-positive alone IPC {ipc}")
    return sum(s / a for s, a in zip(shared, alone))


# -- multiprogrammed mixes -------------------------------------------------------


class MixSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_cores: PositiveInt = 4
    intensive_fraction: Annotated[float, Field(ge=0.0, le=1.0)] = 0.5
    intensive: GeneratorSpec = GeneratorSpec(kind="zipf", mpki=40, page_span=48)
    light: GeneratorSpec = GeneratorSpec(kind="uniform", mpki=5, page_span=16)
    seed: int | None = None

    @property
    def n_intensive(self) -> int:
        return round(self.intensive_fraction * self.n_cores)


def build_mix(mix: MixSpec, seed: int = 0) -> list[GeneratorSpec]:
    """Per-slot generator specs with intensive slots shuffled among the cores."""
    rng = np.random.default_rng(seed if mix.seed is None else mix.seed)
    slots = [True] * mix.n_intensive + [False] * (mix.n_cores - mix.n_intensive)
    order = [int(i) for i in rng.permutation(mix.n_cores)]
    seeds = [int(s) for s in rng.integers(0, 2**31, size=mix.n_cores, dtype=np.int64)]
    specs = []
    for slot in range(mix.n_cores):
        template = mix.intensive if slots[order[slot]] else mix.light
        specs.append(template.model_copy(update={"seed": seeds[slot]}))
    return specs
