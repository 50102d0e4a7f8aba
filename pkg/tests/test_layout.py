import numpy as np
import pytest

from cream_sim.errors import AddressError, LayoutError
from cream_sim.geometry import ModuleGeometry, SliceId
from cream_sim.layout import (
    LayoutMode,
    OpRole,
    Region,
    RegionConfig,
    Rw,
    Staging,
    capacity_pages,
    claimed_bytes,
    enumerate_footprints,
    extra_pages,
    get_layout,
    ignored_chip,
    locate,
    plan_access,
    translate_extra,
)

CREAM_MODES = [m for m in LayoutMode if m is not LayoutMode.BASELINE]


@pytest.mark.parametrize(
    "mode, pages",
    [
        (LayoutMode.BASELINE, 128),
        (LayoutMode.PACKED, 144),
        (LayoutMode.PACKED_RS, 144),
        (LayoutMode.INTER_WRAP, 144),
        (LayoutMode.PARITY, 141),
    ],
)
def test_full_desk_capacity(mode, pages):
    assert capacity_pages(RegionConfig.full(mode)) == pages


def test_parity_capacity_at_520_row_groups():
    geometry = ModuleGeometry(rows_per_bank=520)
    config = RegionConfig.full(LayoutMode.PARITY, geometry)
    assert extra_pages(config) == 448
    assert capacity_pages(config) == 4608
    layout = get_layout(config)
    assert layout.parity_rows == 65
    assert layout.extra_data_row == 65 + 7


@pytest.mark.parametrize("mode", CREAM_MODES)
def test_zero_boundary_has_no_extra_pages(mode):
    config = RegionConfig(mode=mode, boundary_pages=0)
    assert extra_pages(config) == 0
    assert capacity_pages(config) == 128


@pytest.mark.parametrize(
    "mode, extra", [(LayoutMode.PACKED, 8), (LayoutMode.INTER_WRAP, 8), (LayoutMode.PARITY, 6)]
)
def test_half_boundary(mode, extra):
    assert extra_pages(RegionConfig(mode=mode, boundary_pages=64)) == extra


def test_baseline_ignores_boundary():
    layout = get_layout(RegionConfig(mode=LayoutMode.BASELINE, boundary_pages=128))
    assert layout.boundary == 0
    assert layout.capacity_pages == 128
    assert layout.region_of(0) is Region.SECDED


@pytest.mark.parametrize("boundary", [12, 129, 136])
def test_bad_boundaries(boundary):
    with pytest.raises(LayoutError):
        get_layout(RegionConfig(mode=LayoutMode.PACKED, boundary_pages=boundary))


def test_cream_modes_need_banks_equal_to_data_chips():
    with pytest.raises(LayoutError, match="banks"):
        get_layout(RegionConfig(mode=LayoutMode.INTER_WRAP, geometry=ModuleGeometry(banks=4)))


def test_baseline_striping():
    config = RegionConfig.full(LayoutMode.BASELINE)
    footprint = locate(config, 0)
    assert [lane.slice for lane in footprint.lanes] == [SliceId(c, 0) for c in range(8)]
    assert footprint.side.slice == SliceId(8, 0)
    assert (footprint.side.row, footprint.side.column) == (0, 0)
    assert locate(config, 64).lanes[0].slice.bank == 1
    second_row = locate(config, 8 * 64 + 5)
    assert (second_row.lanes[0].slice.bank, second_row.lanes[0].row, second_row.column) == (0, 1, 5)


def test_out_of_range_lines():
    config = RegionConfig.full(LayoutMode.INTER_WRAP)
    with pytest.raises(AddressError):
        locate(config, 144 * 64)
    with pytest.raises(AddressError):
        locate(config, -1)


def test_cream_only_rejects_secded_lines():
    config = RegionConfig(mode=LayoutMode.PACKED, boundary_pages=64)
    assert locate(config, 0, cream_only=True).region is Region.CREAM
    with pytest.raises(AddressError):
        locate(config, 64 * 64, cream_only=True)


def test_packed_extra_line_lives_in_one_ecc_slice():
    config = RegionConfig.full(LayoutMode.PACKED)
    first = locate(config, 8192)
    assert first.region is Region.EXTRA
    assert first.chips() == frozenset({8})
    assert {lane.slice for lane in first.lanes} == {SliceId(8, 0)}
    assert (first.column, first.width) == (0, 8)
    last = locate(config, 8192 + 63)
    assert last.lanes[0].slice == SliceId(8, 7)
    assert last.column == 56
    assert locate(config, 8192 + 5 * 64).lanes[0].row == 5


def test_parity_placement():
    config = RegionConfig.full(LayoutMode.PARITY)
    assert get_layout(config).extra_data_row == 3
    assert locate(config, 8192).lanes[0].row == 3

    side = locate(config, 9 * 64 + 5).side
    assert side.kind == "parity"
    assert side.slice == SliceId(8, 5)
    assert (side.row, side.column, side.byte) == (0, 8, 5)

    extra_side = locate(config, 8192 + 10).side
    assert extra_side.slice == SliceId(8, 5)
    assert (extra_side.row, extra_side.column, extra_side.byte) == (2, 0, 2)


def test_inter_wrap_slots():
    config = RegionConfig.full(LayoutMode.INTER_WRAP)
    slot0 = locate(config, 0)
    assert sorted(lane.slice for lane in slot0.lanes) == [SliceId(c, 0) for c in range(8)]
    slot3 = locate(config, 3 * 64)
    assert sorted(lane.slice for lane in slot3.lanes) == sorted(
        [SliceId(c, 3) for c in range(5)] + [SliceId(c, 2) for c in (6, 7, 8)]
    )
    extra = locate(config, 8192 + 2 * 64 + 7)
    assert sorted(lane.slice for lane in extra.lanes) == [SliceId(c, 7) for c in range(1, 9)]
    assert (extra.lanes[0].row, extra.column) == (2, 7)


@pytest.mark.parametrize("slot", range(9))
def test_ignored_chip_is_the_missing_one(slot):
    config = RegionConfig.full(LayoutMode.INTER_WRAP)
    line = 8192 if slot == 8 else slot * 64
    missing = set(range(9)) - locate(config, line).chips()
    assert missing == {ignored_chip(slot)} == {8 - slot}


def test_ignored_chip_range():
    with pytest.raises(LayoutError):
        ignored_chip(9)


@pytest.mark.parametrize("mode", [LayoutMode.PACKED, LayoutMode.PACKED_RS])
def test_extra_lines_reuse_ecc_bytes_of_their_companions(mode):
    packed = RegionConfig.full(mode)
    baseline = RegionConfig.full(LayoutMode.BASELINE)
    for extra_line in range(8192, 144 * 64):
        companions = translate_extra(packed, extra_line)
        assert len(companions) == 8
        ecc_cells = {
            (side.slice, side.row, side.column)
            for side in (locate(baseline, line).side for line in companions)
        }
        packed_cells = {
            (cell.slice, cell.row, cell.column) for cell in locate(packed, extra_line).cells()
        }
        assert ecc_cells == packed_cells


def test_translate_extra_bounds():
    packed = RegionConfig.full(LayoutMode.PACKED)
    assert translate_extra(packed, 8192 + 3) == tuple(range(24, 32))
    with pytest.raises(AddressError):
        translate_extra(packed, 100)
    with pytest.raises(LayoutError):
        translate_extra(RegionConfig.full(LayoutMode.INTER_WRAP), 8192)


@pytest.mark.slow
@pytest.mark.parametrize("boundary", [0, 64, 128])
@pytest.mark.parametrize("mode", list(LayoutMode))
def test_every_byte_has_at_most_one_owner(mode, boundary):
    config = RegionConfig(mode=mode, boundary_pages=boundary)
    layout = get_layout(config)
    owners = set()
    claimed = 0
    for _, footprint in enumerate_footprints(config):
        for key in claimed_bytes(footprint):
            owners.add(key)
            claimed += 1
    assert claimed == len(owners)
    g = layout.geometry
    assert all(
        0 <= chip < 9 and 0 <= bank < 8 and 0 <= row < g.rows_per_bank and 0 <= column < 64
        for chip, bank, row, column, _ in owners
    )
    assert layout.storage_bytes() - claimed == layout.expected_vacant_bytes()


def test_parity_leaves_a_known_gap():
    layout = get_layout(RegionConfig.full(LayoutMode.PARITY))
    assert layout.expected_vacant_bytes() == 3264


def _expected_ops(mode: LayoutMode, region: Region, rw: Rw) -> int:
    if region is Region.SECDED or mode in (LayoutMode.BASELINE, LayoutMode.INTER_WRAP):
        return 1
    write = rw is Rw.WRITE
    extra = region is Region.EXTRA
    if mode is LayoutMode.PACKED:
        return (16 if write else 8) if extra else (2 if write else 1)
    if mode is LayoutMode.PACKED_RS:
        return 8 if extra else 1
    return (10 if write else 9) if extra else (3 if write else 2)


@pytest.mark.parametrize("boundary", [64, 128])
@pytest.mark.parametrize("mode", list(LayoutMode))
def test_op_counts_for_every_line(mode, boundary):
    config = RegionConfig(mode=mode, boundary_pages=boundary)
    layout = get_layout(config)
    for line in range(layout.capacity_lines):
        region = layout.region_of(line)
        for rw in Rw:
            plan = layout.plan_access(line, rw)
            assert len(plan.ops) == _expected_ops(mode, region, rw)


def test_packed_write_is_read_then_write():
    plan = plan_access(RegionConfig.full(LayoutMode.PACKED), 0, Rw.WRITE)
    assert plan.staging is Staging.RMW
    assert [(op.rw, op.role, op.after) for op in plan.ops] == [
        (Rw.READ, OpRole.ECC_SIDE, None),
        (Rw.WRITE, OpRole.DATA, 0),
    ]
    assert not plan.bridged
    assert all(len(op.group) == 9 for op in plan.ops)


def test_packed_extra_write_pairs_and_relaxed_count():
    plan = plan_access(RegionConfig.full(LayoutMode.PACKED), 8192, Rw.WRITE)
    assert len(plan.ops) == 16
    assert plan.relaxed_op_count == 8
    for read, write in zip(plan.ops[::2], plan.ops[1::2]):
        assert read.rw is Rw.READ and write.rw is Rw.WRITE
        assert write.after == plan.ops.index(read)
        assert read.column == write.column


def test_packed_rs_extra_ops_touch_only_the_ecc_chip():
    plan = plan_access(RegionConfig.full(LayoutMode.PACKED_RS), 8192 + 9, Rw.READ)
    assert plan.bridged
    assert [op.column for op in plan.ops] == list(range(8, 16))
    assert all(op.slices == (SliceId(8, 1),) for op in plan.ops)


def test_parity_write_updates_parity_after_reading_it():
    plan = plan_access(RegionConfig.full(LayoutMode.PARITY), 5, Rw.WRITE)
    roles = [op.role for op in plan.ops]
    assert roles == [OpRole.DATA, OpRole.PARITY_READ, OpRole.PARITY_WRITE]
    assert plan.ops[2].after == 1
    assert plan.bridged


def test_secded_lines_use_the_baseline_plan():
    plan = plan_access(RegionConfig(mode=LayoutMode.PARITY, boundary_pages=64), 64 * 64, Rw.WRITE)
    assert plan.region is Region.SECDED
    assert len(plan.ops) == 1
    assert not plan.bridged


def test_uniform_read_expansion_is_exact_over_the_whole_space():
    layout = get_layout(RegionConfig.full(LayoutMode.PACKED_RS))
    total = sum(len(layout.plan_access(line, Rw.READ).ops) for line in range(layout.capacity_lines))
    assert total / layout.capacity_lines == pytest.approx(16 / 9)


@pytest.mark.slow
def test_sampled_read_expansion():
    rng = np.random.default_rng(11)
    lines = rng.integers(0, 144 * 64, size=200_000)
    ratios = {}
    for mode in (LayoutMode.PACKED, LayoutMode.PACKED_RS):
        layout = get_layout(RegionConfig.full(mode))
        ops = sum(len(layout.plan_access(int(line), Rw.READ).ops) for line in lines)
        ratios[mode] = ops / len(lines)
    assert ratios[LayoutMode.PACKED] == ratios[LayoutMode.PACKED_RS]
    assert ratios[LayoutMode.PACKED_RS] == pytest.approx(16 / 9, rel=0.01)


def test_packed_regular_writes_double_the_ops():
    packed = get_layout(RegionConfig.full(LayoutMode.PACKED))
    baseline = get_layout(RegionConfig.full(LayoutMode.BASELINE))
    lines = range(0, 8192, 7)
    packed_ops = sum(len(packed.plan_access(line, Rw.WRITE).ops) for line in lines)
    baseline_ops = sum(len(baseline.plan_access(line, Rw.WRITE).ops) for line in lines)
    assert packed_ops / baseline_ops == 2.0


def test_packed_mixed_traffic_over_the_whole_space():
    packed = get_layout(RegionConfig.full(LayoutMode.PACKED))
    total = sum(
        len(packed.plan_access(line, rw).ops) for line in range(packed.capacity_lines) for rw in Rw
    )
    assert total / (2 * packed.capacity_lines) == pytest.approx(8 / 3)
