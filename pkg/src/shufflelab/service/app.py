"""HTTP service exposing every command.

Errors map to status codes by category: invalid request shape is 422
(handled by FastAPI), semantically bad configuration is 400 with
category "config", and computations without a usable result (all step
sizes diverged, a run hit non-finite state) are 400 with category
"numeric".
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, commands
from ..config import ConfigError
from ..harness import NumericError
from ..oracle import DivergenceError
from .models import CommandRequest, CommandResponse, HealthResponse, MeasureRequest


def _as_response(result: commands.CommandResult) -> CommandResponse:
    return CommandResponse(
        summary=result.summary,
        summary_lines=result.summary_lines,
        artifacts=result.artifacts,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="shufflelab", version=__version__)

    @app.exception_handler(ConfigError)
    async def _config_error(request: Request, err: ConfigError):
        return JSONResponse(status_code=400,
                            content={"category": "config", "detail": str(err)})

    @app.exception_handler(NumericError)
    async def _numeric_error(request: Request, err: NumericError):
        return JSONResponse(status_code=400,
                            content={"category": "numeric", "detail": str(err)})

    @app.exception_handler(DivergenceError)
    async def _divergence_error(request: Request, err: DivergenceError):
        return JSONResponse(status_code=400,
                            content={"category": "numeric", "detail": str(err)})

    @app.get("/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/v1/run", response_model=CommandResponse)
    def run_endpoint(req: CommandRequest) -> CommandResponse:
        return _as_response(commands.run_command(req.config))

    @app.post("/v1/tune", response_model=CommandResponse)
    def tune_endpoint(req: CommandRequest) -> CommandResponse:
        return _as_response(commands.tune_command(req.config))

    @app.post("/v1/sweep", response_model=CommandResponse)
    def sweep_endpoint(req: CommandRequest) -> CommandResponse:
        return _as_response(commands.sweep_command(req.config))

    @app.post("/v1/greedy", response_model=CommandResponse)
    def greedy_endpoint(req: CommandRequest) -> CommandResponse:
        return _as_response(commands.greedy_command(req.config))

    @app.post("/v1/sameclass", response_model=CommandResponse)
    def sameclass_endpoint(req: CommandRequest) -> CommandResponse:
        return _as_response(commands.sameclass_command(req.config))

    @app.post("/v1/measure", response_model=CommandResponse)
    def measure_endpoint(req: MeasureRequest) -> CommandResponse:
        return _as_response(commands.measure_command(req.config, req.order))

    return app
