from fastapi import FastAPI
from fastapi.responses import Response
from prometheus_client import CONTENT_TYPE_LATEST, generate_latest

from . import api
from .models import Method

SERVICE_NAME = "pecf-experiments"


def create_app() -> FastAPI:
    """Experiment service: `/api` runs and synthesizes, `/metrics` exports run counters and solve timings."""
    app = FastAPI(title="PECF Experiment API")
    app.include_router(api.router, prefix="/api")

    @app.get("/metrics")
    async def metrics():
        return Response(generate_latest(), media_type=CONTENT_TYPE_LATEST)

    @app.get("/")
    async def root():
        return {
            "status": "ok",
            "service": SERVICE_NAME,
            "methods": [m.value for m in Method],
            "output_root": str(api.OUTPUT_ROOT),
        }

    return app


app = create_app()
