"""Request and response bodies for the trace service."""
from __future__ import annotations

from pydantic import BaseModel, Field


class UploadResponse(BaseModel):
    id: str
    samples: int
    features: list[str]


class ClassifyRequest(BaseModel):
    trace_id: str
    model_id: str | None = None
    force: bool = False


class ClassificationOut(BaseModel):
    trace_id: str
    model_id: str
    label_id: int
    label: str
    probabilities: list[float]
    labels: list[str]
    latency_us: float
    onset: int | None
    forced: bool = False


class TraceView(BaseModel):
    id: str
    received_at_us: int
    samples: int
    sample_interval_us: int
    features: list[str]
    device: dict
    label: str | None = None
    classifications: dict[str, ClassificationOut] = Field(default_factory=dict)
    raw: str | None = None


class ModelView(BaseModel):
    id: str
    manifest: dict


class Health(BaseModel):
    status: str = "ok"
    store: str
    traces: int
    models: int
    uptime_s: float


class ServiceConfig(BaseModel):
    host: str = "127.0.0.1"
    port: int = 8000
    store: str = "oscope-store"
    models: list[str] = Field(default_factory=list)
    max_upload_bytes: int = 64 * 1024 * 1024
