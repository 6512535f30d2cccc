import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.api import methods, runs
from app.config import get_settings
from app.services.run_registry import get_run_registry, reset_run_registry

log = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    app.state.runs = get_run_registry()
    log.info("Results directory: %s", get_settings().results_dir)
    yield
    reset_run_registry()


app = FastAPI(
    title=get_settings().app_name,
    version="0.1.0",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(methods.router)
app.include_router(runs.router)


@app.get("/health")
async def health_check():
    return {"status": "ok"}
