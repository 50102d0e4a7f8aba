import numpy as np
import pytest
from pydantic import ValidationError

from cream_sim.errors import ConfigError
from cream_sim.geometry import ModuleGeometry
from cream_sim.layout import LayoutMode, RegionConfig
from cream_sim.paging import DirectMemory, Fault, FaultModel, FrameTable, Hit, PagedMemory, frames_for


def _keys(*pages):
    return [(0, p) for p in pages]


def test_cold_pages_take_the_lowest_free_frames():
    table = FrameTable(4)
    assert table.access((0, 7)) == Fault(0)
    assert table.access((1, 7)) == Fault(1)
    assert table.access((0, 7)) == Hit(0)
    assert (table.faults, table.hits, table.resident) == (2, 1, 2)


def test_second_reference_promotes():
    table = FrameTable(8)
    table.access((0, 1))
    assert list(table.inactive) == _keys(1)
    table.access((0, 1))
    assert list(table.active) == _keys(1)
    assert not table.inactive


def test_active_list_is_kept_in_ratio():
    table = FrameTable(10, active_ratio=2.0)
    for page in range(6):
        table.access((0, page))
    for page in range(6):
        table.access((0, page))
    assert list(table.active) == _keys(2, 3, 4, 5)
    assert list(table.inactive) == _keys(0, 1)
    table.check()


def test_victim_is_the_inactive_tail():
    table = FrameTable(2)
    table.access((0, 1))
    table.access((0, 2))
    assert table.access((0, 3)) == Fault(0, victim=(0, 1))
    assert table.evictions == 1
    assert table.frame_of((0, 1)) is None
    assert table.frame_of((0, 3)) == 0


def test_victim_falls_back_to_the_active_list():
    table = FrameTable(1)
    table.access((0, 1))
    table.access((0, 1))
    assert list(table.active) == _keys(1)
    assert table.access((0, 2)) == Fault(0, victim=(0, 1))


def test_working_set_that_fits_only_faults_once():
    table = FrameTable(16)
    for _ in range(3):
        for page in range(16):
            table.access((0, page))
    assert table.faults == 16


def test_cyclic_scan_larger_than_memory_always_faults():
    table = FrameTable(8)
    for _ in range(5):
        for page in range(9):
            table.access((0, page))
    assert table.faults == 45
    table.check()


def test_more_frames_never_fault_more():
    rng = np.random.default_rng(3)
    pages = rng.zipf(1.3, size=20_000) % 200
    working_set = len(set(pages.tolist()))
    faults = []
    for frames in (working_set // 2, working_set, 2 * working_set):
        table = FrameTable(frames)
        for page in pages:
            table.access((0, int(page)))
        table.check()
        faults.append(table.faults)
    assert faults[0] >= faults[1] == faults[2] == working_set


def test_frame_table_needs_a_frame():
    with pytest.raises(ConfigError):
        FrameTable(0)


def test_default_fault_penalty():
    model = FaultModel()
    assert model.penalty_ns == 500_000
    assert model.penalty_cycles(2.6) == 1_300_000


def test_zero_penalty():
    assert FaultModel(ssd_ns=0, software_ns=0).penalty_cycles(2.6) == 0


def test_penalty_must_be_the_sum():
    assert FaultModel(penalty_ns=500_000).penalty_ns == 500_000
    with pytest.raises(ValidationError):
        FaultModel(penalty_ns=1_000)


def test_back_to_back_faults_accumulate():
    memory = PagedMemory(2, 64, FaultModel(ssd_ns=300, software_ns=100), freq_ghz=2.6)
    assert memory.penalty == 1040
    line, faulted = memory.translate(0, 5)
    assert (line, faulted) == (5, True)
    first = memory.charge_fault(0, 0)
    line, faulted = memory.translate(0, 64 * 9 + 3)
    assert (line, faulted) == (64 + 3, True)
    assert memory.charge_fault(0, first) == 2 * memory.penalty
    assert memory.translate(0, 6) == (6, False)
    assert memory.faults_per_core == {0: 2}


def test_direct_memory_wraps():
    memory = DirectMemory(8192)
    assert memory.translate(0, 8192 + 5) == (5, False)
    assert memory.charge_fault(0, 17) == 17


@pytest.mark.parametrize(
    "config, frames",
    [
        (RegionConfig.full(LayoutMode.INTER_WRAP), 144),
        (RegionConfig.full(LayoutMode.BASELINE), 128),
        (RegionConfig.full(LayoutMode.PARITY, ModuleGeometry(rows_per_bank=520)), 4608),
    ],
)
def test_frames_follow_capacity(config, frames):
    assert frames_for(config) == frames
