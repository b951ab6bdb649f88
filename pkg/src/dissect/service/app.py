"""FastAPI application exposing the solver."""

import logging
import os

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import DissectError
from . import core, schemas

_ENDPOINTS = [
    "GET /",
    "POST /mesh/generate",
    "POST /solve",
    "POST /verify",
    "POST /resolve",
    "POST /report",
    "POST /sessions",
    "GET /sessions/{session_id}",
    "POST /sessions/{session_id}/resolve",
    "DELETE /sessions/{session_id}",
]


def configure_logging(level=None):
    """Honour DISSECT_LOG (off | info | trace) for protocol logging."""
    level = level if level is not None else os.environ.get("DISSECT_LOG", "off")
    root = logging.getLogger("dissect")
    if level == "trace":
        logging.basicConfig(format="%(name)s %(message)s")
        root.setLevel(logging.DEBUG)
    elif level == "info":
        logging.basicConfig(format="%(name)s %(message)s")
        root.setLevel(logging.INFO)
    else:
        root.setLevel(logging.WARNING)


def create_app() -> FastAPI:
    configure_logging()
    app = FastAPI(title="dissect", version=__version__)
    sessions = core.SessionStore()

    @app.exception_handler(DissectError)
    async def _dissect_error(request, exc):
        return JSONResponse(
            status_code=400,
            content={"detail": str(exc), "error": type(exc).__name__},
        )

    @app.get("/", response_model=schemas.ServiceInfo)
    def service_info():
        return schemas.ServiceInfo(
            name="dissect", version=__version__, endpoints=_ENDPOINTS
        )

    @app.post("/mesh/generate")
    def mesh_generate(params: schemas.MeshParams):
        _, doc = core.mesh_payload(params)
        return doc

    @app.post("/solve", response_model=schemas.SolveResponse, response_model_exclude_none=True)
    def solve(req: schemas.SolveRequest):
        return core.solve(req)

    @app.post("/verify", response_model=schemas.VerifyResponse)
    def verify(req: schemas.VerifyRequest):
        return core.verify(req)

    @app.post("/resolve", response_model=schemas.ResolveResponse, response_model_exclude_none=True)
    def resolve(req: schemas.ResolveRequest):
        return core.resolve(req)

    @app.post("/report", response_model=schemas.MetricsSummary, response_model_by_alias=True)
    def report(req: schemas.ReportRequest):
        return core.trace_report(req)

    @app.post("/sessions", response_model=schemas.SessionInfo)
    def create_session(req: schemas.SessionCreateRequest):
        return sessions.create(req).info()

    @app.get("/sessions/{session_id}", response_model=schemas.SessionInfo)
    def session_info(session_id: str):
        try:
            return sessions.get(session_id).info()
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no session {session_id}")

    @app.post(
        "/sessions/{session_id}/resolve",
        response_model=schemas.SessionResolveResponse,
        response_model_exclude_none=True,
    )
    def session_resolve(session_id: str, req: schemas.SessionResolveRequest):
        try:
            session = sessions.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no session {session_id}")
        return session.resolve(req)

    @app.delete("/sessions/{session_id}")
    def drop_session(session_id: str):
        if not sessions.drop(session_id):
            raise HTTPException(status_code=404, detail=f"no session {session_id}")
        return {"dropped": session_id}

    return app
