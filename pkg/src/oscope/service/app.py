"""HTTP service: trace ingestion, storage and classification."""
from __future__ import annotations

import json
import logging
import os
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import Response

from .. import traceio
from ..core import DataError
from ..nn import serialize
from ..pipeline import IncompatibleModel, NoOnset, classify_trace
from .schemas import ClassificationOut, ClassifyRequest, Health, ModelView, ServiceConfig, TraceView, UploadResponse
from .store import TraceStore, valid_id

log = logging.getLogger(__name__)

STORE_ENV = "OSCOPE_STORE"


def load_config(path: str | Path | None = None, **overrides) -> ServiceConfig:
    """Read a JSON config file (optional), apply overrides, then OSCOPE_STORE."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read service config {path}: {e}") from e
    data.update({k: v for k, v in overrides.items() if v is not None})
    if os.environ.get(STORE_ENV):
        data["store"] = os.environ[STORE_ENV]
    return ServiceConfig(**data)


def _model_id(path: str) -> str:
    return Path(path).stem


def load_models(paths) -> dict[str, tuple[object, dict]]:
    models = {}
    for p in paths:
        raw = Path(p).read_bytes()
        mid = _model_id(p)
        if mid in models:
            raise DataError(f"duplicate model id {mid!r}")
        models[mid] = (serialize.from_bytes(raw), serialize.manifest_of(raw))
    return models


def create_app(config: ServiceConfig | None = None, models: dict | None = None) -> FastAPI:
    """Build the app; ``models`` maps id -> loaded model and overrides config.models."""
    config = config or load_config()
    store = TraceStore(config.store)
    if models is None:
        loaded = load_models(config.models)
    else:
        loaded = {mid: (m, {"kind": m.kind, "labels": [lb.name for lb in m.labels],
                            "features": [str(f) for f in m.features]}) for mid, m in models.items()}
    started = time.monotonic()

    app = FastAPI(title="oscope trace service")
    app.state.store = store
    app.state.models = loaded

    @app.get("/v1/health", response_model=Health)
    def health():
        return Health(store=str(store.root.resolve()), traces=len(store), models=len(loaded),
                      uptime_s=time.monotonic() - started)

    @app.post("/v1/traces", status_code=201, response_model=UploadResponse)
    async def upload(request: Request):
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > config.max_upload_bytes:
            raise HTTPException(413, "trace exceeds upload limit")
        body = bytearray()
        async for chunk in request.stream():
            body += chunk
            if len(body) > config.max_upload_bytes:
                raise HTTPException(413, "trace exceeds upload limit")
        body = bytes(body)
        try:
            trace = traceio.loads(body)
        except DataError as e:
            raise HTTPException(400, f"malformed trace: {e}")
        meta = {"samples": trace.length, "sample_interval_us": trace.sample_interval,
                "features": [str(f) for f in trace.features],
                "device": {"model": trace.device.model, "os_version": trace.device.os_version,
                           "hostname": trace.device.hostname},
                "label": trace.label.name if trace.label else None}
        try:
            trace_id = store.put(body, meta)
        except OSError as e:
            log.error("store write failed: %s", e)
            raise HTTPException(500, "storage failure")
        return UploadResponse(id=trace_id, samples=trace.length, features=meta["features"])

    def _entry(trace_id: str) -> dict:
        entry = store.entry(trace_id) if valid_id(trace_id) else None
        if entry is None:
            raise HTTPException(404, f"unknown trace id {trace_id}")
        return entry

    @app.get("/v1/traces/{trace_id}", response_model=TraceView)
    def get_trace(trace_id: str, include_raw: bool = False):
        entry = _entry(trace_id)
        raw = store.raw(trace_id).decode() if include_raw else None
        results = {k: ClassificationOut(**v) for k, v in store.results(trace_id).items()}
        return TraceView(id=trace_id, received_at_us=entry["received_at_us"], samples=entry["samples"],
                         sample_interval_us=entry["sample_interval_us"], features=entry["features"],
                         device=entry["device"], label=entry.get("label"), classifications=results, raw=raw)

    @app.get("/v1/traces/{trace_id}/raw")
    def get_raw(trace_id: str):
        _entry(trace_id)
        return Response(store.raw(trace_id), media_type="text/plain; charset=utf-8")

    @app.get("/v1/models", response_model=list[ModelView])
    def list_models():
        return [ModelView(id=mid, manifest=_public(manifest)) for mid, (_, manifest) in loaded.items()]

    def _pick_model(req: ClassifyRequest, device_model: str) -> str:
        if req.model_id is not None:
            if req.model_id not in loaded:
                raise HTTPException(404, f"unknown model id {req.model_id}")
            return req.model_id
        matching = [mid for mid, (m, _) in loaded.items() if m.device_model and m.device_model == device_model]
        if len(matching) == 1:
            return matching[0]
        if len(loaded) == 1:
            return next(iter(loaded))
        if not loaded:
            raise HTTPException(404, "no models loaded")
        raise HTTPException(409, "model_id required: no unique model for this device")

    @app.post("/v1/classify", response_model=ClassificationOut)
    def classify(req: ClassifyRequest):
        entry = _entry(req.trace_id)
        model_id = _pick_model(req, entry["device"]["model"])
        model = loaded[model_id][0]
        trace = traceio.loads(store.raw(req.trace_id))
        try:
            result, onset, forced = classify_trace(model, trace, force=req.force)
        except IncompatibleModel as e:
            raise HTTPException(409, str(e))
        except NoOnset as e:
            raise HTTPException(422, f"{e}; retry with force=true to use the head of the trace")
        out = ClassificationOut(trace_id=req.trace_id, model_id=model_id, label_id=result.label.id,
                                label=result.label.name, probabilities=result.probabilities.tolist(),
                                labels=[lb.name for lb in model.labels], latency_us=result.latency,
                                onset=onset, forced=forced)
        store.put_result(req.trace_id, model_id, out.model_dump())
        return out

    return app


def _public(manifest: dict) -> dict:
    return {k: v for k, v in manifest.items() if k != "blobs"}


def serve(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
