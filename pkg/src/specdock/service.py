"""HTTP/JSON face of the dock.

Endpoints mirror the two workflows: anchor-descriptor distribution, learnware
submission, and identification. Specs travel base64-encoded inside JSON
bodies; the service stores and serves the exact bytes. There is no endpoint
that accepts raw examples.
"""

import base64
import binascii

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .anchor import AnchorConfig
from .errors import BadRequestError, SpecDockError
from .identify import identify
from .registry import AnchorDescriptor, Registry, read_spec_file

# Closed ApiError code set. Errors outside the direct map collapse to
# bad-request (client-side causes) or internal.
_DIRECT_STATUS = {
    "anchor-mismatch": 409,
    "zero-vector-spec": 400,
    "dim-mismatch": 400,
    "not-found": 404,
}
_CLIENT_CODES = {
    "bad-magic",
    "truncated",
    "header-json-invalid",
    "payload-length-mismatch",
    "invalid-config",
    "label-out-of-range",
    "empty-text",
    "empty-dataset",
    "empty-batch",
    "zero-vector",
    "length-mismatch",
    "invalid-dims",
    "bad-request",
    "step-out-of-range",
}


def _api_error(exc: SpecDockError) -> JSONResponse:
    if exc.code in _DIRECT_STATUS:
        code, status = exc.code, _DIRECT_STATUS[exc.code]
    elif exc.code in _CLIENT_CODES:
        code, status = "bad-request", 400
    else:
        code, status = "internal", 500
    return JSONResponse(
        status_code=status, content={"code": code, "message": exc.message}
    )


class SubmitRequest(BaseModel):
    model_uri: str
    spec_b64: str
    metadata: dict[str, str] = Field(default_factory=dict)


class IdentifyRequest(BaseModel):
    spec_b64: str
    k: int = 1


def _decode_spec(spec_b64: str):
    try:
        raw = base64.b64decode(spec_b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise BadRequestError(f"spec_b64 is not valid base64: {exc}") from exc
    return read_spec_file(raw)


def _learnware_json(lw) -> dict:
    return {
        "id": lw.id,
        "model_uri": lw.model_uri,
        "metadata": lw.metadata,
        "header": lw.spec.header_dict(),
    }


def create_app(
    data_dir, anchor_config: AnchorConfig | AnchorDescriptor | None = None
) -> FastAPI:
    registry = Registry.open(data_dir, anchor_config)
    app = FastAPI(title="specdock", version="0.1.0")
    app.state.registry = registry

    @app.exception_handler(SpecDockError)
    async def handle_dock_error(request: Request, exc: SpecDockError):
        return _api_error(exc)

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"code": "bad-request", "message": str(exc)}
        )

    @app.exception_handler(Exception)
    async def handle_unexpected(request: Request, exc: Exception):
        return JSONResponse(
            status_code=500, content={"code": "internal", "message": "internal error"}
        )

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.get("/api/v1/anchor")
    async def get_anchor():
        return registry.get_anchor_descriptor().to_dict()

    @app.post("/api/v1/learnwares")
    async def submit(req: SubmitRequest):
        spec = _decode_spec(req.spec_b64)
        lw_id = registry.submit(req.model_uri, spec, req.metadata)
        return {"id": lw_id}

    @app.get("/api/v1/learnwares")
    async def list_learnwares():
        return {"learnwares": [_learnware_json(lw) for lw in registry.list_learnwares()]}

    @app.get("/api/v1/learnwares/{lw_id}")
    async def get_learnware(lw_id: int):
        return _learnware_json(registry.get(lw_id))

    @app.delete("/api/v1/learnwares/{lw_id}")
    async def remove_learnware(lw_id: int):
        registry.remove(lw_id)
        return {"removed": lw_id}

    @app.post("/api/v1/identify")
    async def identify_endpoint(req: IdentifyRequest):
        spec = _decode_spec(req.spec_b64)
        matches = identify(registry, spec, req.k)
        out = []
        for m in matches:
            lw = registry.get(m.learnware_id)
            out.append(
                {
                    "id": m.learnware_id,
                    "similarity": m.similarity,
                    "rank": m.rank,
                    "model_uri": lw.model_uri,
                    "metadata": lw.metadata,
                }
            )
        return {"matches": out}

    return app


def serve(
    data_dir,
    bind_addr: str = "127.0.0.1:8000",
    anchor_config: AnchorConfig | AnchorDescriptor | None = None,
) -> None:
    import uvicorn

    host, _, port = bind_addr.rpartition(":")
    if not host or not port.isdigit():
        raise BadRequestError(f"bind address must be HOST:PORT, got {bind_addr!r}")
    app = create_app(data_dir, anchor_config)
    uvicorn.run(app, host=host, port=int(port), log_level="info")
