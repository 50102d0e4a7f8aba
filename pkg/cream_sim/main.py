import asyncio
from contextlib import asynccontextmanager
from typing import Annotated

from fastapi import Body, Depends, FastAPI, HTTPException, status
from fastapi.responses import RedirectResponse, StreamingResponse
from loguru import logger
from pydantic import BaseModel, Field, ValidationError

from .dependencies import get_region
from .errors import CreamError
from .geometry import ModuleGeometry, ddr3_1333_defaults
from .harness import capacity_report, run, sweep, sweep_table
from .layout import RegionConfig, Rw, describe_footprint, describe_plan, get_layout
from .schemas import CapacityReport, RemoteRunConfig, SimReport, SweepAxis
from .utils import rows_to_csv_buffer

defaults = {}


class SweepRequest(BaseModel):
    config: RemoteRunConfig
    axis: SweepAxis
    values: Annotated[list[str], Field(min_length=1)]
    jobs: Annotated[int, Field(ge=1, le=64)] = 1


@asynccontextmanager
async def lifespan(_: FastAPI):
    logger.info("loading default geometry and timing")
    defaults["geometry"] = ModuleGeometry()
    defaults["timing"] = ddr3_1333_defaults()
    logger.info("defaults loaded successfully")

    yield

    logger.info("clearing defaults")
    defaults.clear()


app = FastAPI(title="CREAM DRAM simulator", lifespan=lifespan)


@app.get("/", include_in_schema=False)
def docs_redirect_controller():
    return RedirectResponse(url="/docs", status_code=status.HTTP_303_SEE_OTHER)


@app.get("/defaults")
def defaults_controller() -> dict:
    return {key: value.model_dump() for key, value in defaults.items()}


@app.get("/capacity")
def capacity_controller(region: RegionConfig = Depends(get_region)) -> CapacityReport:
    return capacity_report(region.mode, region.boundary_pages, region.geometry)


@app.get("/translate")
def translate_controller(
    addr: str, rw: Rw = Rw.READ, region: RegionConfig = Depends(get_region)
) -> dict:
    layout = get_layout(region)
    try:
        line = int(addr, 16) // region.geometry.line_bytes
        return {
            "addr": addr,
            "line": line,
            "footprint": describe_footprint(layout.locate(line)),
            "plan": describe_plan(layout.plan_access(line, rw)),
        }
    except (CreamError, ValueError) as e:
        raise HTTPException(detail=str(e), status_code=status.HTTP_400_BAD_REQUEST)


@app.post("/simulate")
async def simulate_controller(config: RemoteRunConfig = Body(...)) -> SimReport:
    loop = asyncio.get_running_loop()
    try:
        return await loop.run_in_executor(None, run, config)
    except (CreamError, ValidationError, OSError) as e:
        logger.warning(f"simulation failed: {e}")
        raise HTTPException(detail=str(e), status_code=status.HTTP_400_BAD_REQUEST)


@app.post("/sweep", responses={status.HTTP_200_OK: {"content": {"text/csv": {}}}})
async def sweep_controller(body: SweepRequest = Body(...)):
    loop = asyncio.get_running_loop()
    rows = await loop.run_in_executor(None, sweep, body.config, body.axis, body.values, body.jobs)
    return StreamingResponse(rows_to_csv_buffer(sweep_table(rows)), media_type="text/csv")
