import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from fastapi import APIRouter, HTTPException
from fastapi.concurrency import run_in_threadpool
from pydantic import BaseModel, Field

from .data_loader import DATA_ROOT
from .models import RunConfig
from .orchestrator import Orchestrator
from .synthetic import generate_synthetic
from .wmf import WmfSolveError

load_dotenv()

OUTPUT_ROOT = Path(os.getenv("PECF_OUTPUT_ROOT", "runs"))

router = APIRouter()


class SynthRequest(BaseModel):
    name: str = Field("synthetic", pattern=r"^[A-Za-z0-9_.-]+$")
    m: int = Field(400, ge=1)
    n: int = Field(300, ge=1)
    blocks: int = Field(2, ge=1)
    d_true: int = Field(5, ge=1)
    noise: float = Field(0.5, ge=0)
    positive_rate: float = Field(0.1, gt=0, lt=1)
    seed: Optional[int] = 7


orchestrator = Orchestrator(output_root=OUTPUT_ROOT)


def _inside(path: Path, roots) -> bool:
    resolved = path.resolve()
    return any(resolved.is_relative_to(root.resolve()) for root in roots)


def _check_paths(config: RunConfig) -> None:
    """Requests may only read below the output or data roots and only write below the output root."""
    out = Path(config.output_dir)
    if out.is_absolute() or not _inside(OUTPUT_ROOT / out, (OUTPUT_ROOT,)):
        raise HTTPException(status_code=422, detail=f"output_dir must be a relative path inside {OUTPUT_ROOT}")
    for field in ("dataset_path", "prepared_path"):
        value = getattr(config, field)
        if value is not None and not _inside(Path(value), (OUTPUT_ROOT, DATA_ROOT)):
            raise HTTPException(status_code=422, detail=f"{field} must lie inside {OUTPUT_ROOT} or {DATA_ROOT}")


@router.post('/experiments')
async def run_experiment(config: RunConfig):
    _check_paths(config)
    try:
        result = await run_in_threadpool(orchestrator.run_experiment, config)
    except (ValueError, FileNotFoundError, WmfSolveError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    return result.model_dump(mode="json")


@router.post('/synth')
async def synth(req: SynthRequest):
    target = OUTPUT_ROOT / "data" / f"{req.name}.csv"
    try:
        path = await run_in_threadpool(
            generate_synthetic, target, req.m, req.n, req.blocks, req.d_true, req.noise, req.seed or 0, req.positive_rate
        )
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return {'path': str(path)}
