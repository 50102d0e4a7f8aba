from typing import Annotated

from fastapi import HTTPException, Query, status
from pydantic import ValidationError

from .errors import CreamError
from .geometry import ModuleGeometry
from .layout import LayoutMode, RegionConfig, check_region


async def get_region(
    mode: LayoutMode,
    boundary: Annotated[int | None, Query(ge=0, description="boundary pages, default all")] = None,
    rows_per_bank: Annotated[int, Query(gt=0)] = ModuleGeometry().rows_per_bank,
) -> RegionConfig:
    try:
        geometry = ModuleGeometry(rows_per_bank=rows_per_bank)
        if boundary is None:
            boundary = geometry.baseline_pages
        region = RegionConfig(mode=mode, boundary_pages=boundary, geometry=geometry)
        check_region(region)
    except (CreamError, ValidationError) as e:
        raise HTTPException(detail=str(e), status_code=status.HTTP_400_BAD_REQUEST)
    return region
