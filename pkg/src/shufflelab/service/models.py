"""Request and response bodies for the HTTP API.

Requests wrap the same configuration tree the CLI reads from YAML, so
a config file posts verbatim under the "config" key.  Responses carry
the printable summary lines and every artifact body by filename; the
client decides where files land.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict

from ..config import ExperimentConfig


class CommandRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: ExperimentConfig


class MeasureRequest(CommandRequest):
    # 1-based component indices, as in order files; omit to derive the
    # order from the config's strategy section
    order: list[int] | None = None


class CommandResponse(BaseModel):
    summary: dict
    summary_lines: list[str]
    artifacts: dict[str, str]


class HealthResponse(BaseModel):
    status: str
    version: str
