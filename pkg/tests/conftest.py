import pytest

from cream_sim.checker import check_log
from cream_sim.engine import Controller, ControllerSettings
from cream_sim.geometry import ModuleGeometry, TimingParams
from cream_sim.harness import execute
from cream_sim.layout import LayoutMode, RegionConfig, get_layout
from cream_sim.schemas import RunConfig


@pytest.fixture
def desk() -> ModuleGeometry:
    return ModuleGeometry()


@pytest.fixture
def timing() -> TimingParams:
    return TimingParams()


@pytest.fixture
def controller_for():
    """Controller over a desk-scale layout, command log on."""

    def build(mode=LayoutMode.BASELINE, boundary_pages=None, timing=None, **settings):
        geometry = ModuleGeometry()
        if boundary_pages is None:
            boundary_pages = geometry.baseline_pages
        layout = get_layout(RegionConfig(mode=mode, boundary_pages=boundary_pages))
        settings = ControllerSettings(command_log=True, **settings)
        return Controller(layout, timing or TimingParams(), settings)

    return build


@pytest.fixture
def make_config():
    """RunConfig with paging and weighted speedup off unless asked for."""

    def build(cores, mode="baseline", boundary_pages=None, budget=4000, **sections):
        data = {
            "layout": {"mode": mode, "boundary_pages": boundary_pages},
            "workload": {
                "n_cores": len(cores),
                "instruction_budget": budget,
                "seed": 7,
                "cores": cores,
            },
            "paging": {"enabled": False},
            "controller": {"command_log": True},
            "report": {"weighted_speedup": False},
        }
        for section, values in sections.items():
            data.setdefault(section, {}).update(values)
        return RunConfig.model_validate(data)

    return build


@pytest.fixture
def run_checked():
    """Run a config and fail on any timing violation in its command log."""

    def run(config: RunConfig):
        report, simulation = execute(config)
        assert check_log(simulation.controller.log, config.timing, config.geometry) == []
        return report, simulation

    return run
