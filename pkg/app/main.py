import logging
from contextlib import asynccontextmanager

import uvicorn
from fastapi import FastAPI, Request, status
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

import app.settings as settings
from app.routers import (
    actions,
)
from app.sysid.sdp.backends import available_backends


logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    # Startup Hook
    backends = available_backends()
    missing = sorted(set(settings.SOLVER_BACKENDS) - set(backends))
    if missing:
        logger.warning(f"Configured solver backends not installed: {missing}", extra={"needs_attention": True})
    logger.info(f"Serving commands with solver backends {backends} and output dir {settings.OUTPUT_DIR}.")
    yield


app = FastAPI(
    title="Oscillator Identification Service",
    description="Batch execution of the synth, fit, eval and verify commands",
    version="1",
    root_path=settings.SERVICE_ROOT_PATH,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get(
    "/",
    tags=["health-check"],
    summary="Check that the service is healthy and which solver backends it can use",
)
def read_root(
    request: Request,
):
    backends = available_backends()
    return {"status": "healthy" if backends else "degraded", "solvers": backends}


app.include_router(
    actions.router, prefix="/v1/actions", tags=["actions"], responses={}
)


@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request: Request, exc: RequestValidationError):
    detail = jsonable_encoder({"detail": exc.errors(), "body": exc.body})
    logger.debug(f"Rejected request to {request.url.path}: {detail}")
    return JSONResponse(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, content=detail)


if __name__ == "__main__":
    uvicorn.run(app, host="0.0.0.0", port=8080)
