"""HTTP facade over the workflow.

JSON everywhere except rasters: those travel as raw little-endian bodies
with the sidecar JSON (dims, dtype, spacing) in the ``X-Raster`` header,
mirroring the on-disk format.  Errors come back as JSON
``{"error": <type>, "message": <text>}`` with 400/404/409 status.
"""

from __future__ import annotations

import json

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from ..volume import LabelMap, Volume3D
from .config import ServiceConfig
from .workflow import ConflictError, NotFoundError, Workflow

__all__ = ["create_app"]

_DTYPES = {"u8": "<u1", "u16": "<u2", "u32": "<u4"}


def _parse_raster_header(request: Request) -> dict:
    raw = request.headers.get("X-Raster")
    if raw is None:
        raise ValueError("raster upload needs an X-Raster header with dims and dtype")
    header = json.loads(raw)
    dims = tuple(int(d) for d in header.get("dims", ()))
    if len(dims) != 3:
        raise ValueError(f"X-Raster dims must have 3 entries, got {header.get('dims')}")
    if header.get("dtype") not in _DTYPES:
        raise ValueError(f"X-Raster dtype must be one of {sorted(_DTYPES)}")
    header["dims"] = dims
    return header


def _decode_body(body: bytes, header: dict) -> np.ndarray:
    dims = header["dims"]
    dtype = np.dtype(_DTYPES[header["dtype"]])
    n = dims[0] * dims[1] * dims[2]
    if len(body) != n * dtype.itemsize:
        raise ValueError(
            f"raster body is {len(body)} bytes; dims {list(dims)} with dtype "
            f"{header['dtype']} need {n * dtype.itemsize}"
        )
    return np.frombuffer(body, dtype=dtype).copy()


def _volume_response(volume: Volume3D) -> Response:
    dtype = "u8" if volume.values.dtype == np.uint8 else "u16"
    header = {
        "dims": list(volume.dims),
        "dtype": dtype,
        "spacing": list(volume.spacing),
    }
    return Response(
        content=volume.values.astype(_DTYPES[dtype]).tobytes(),
        media_type="application/octet-stream",
        headers={"X-Raster": json.dumps(header)},
    )


def _labels_response(labels: LabelMap) -> Response:
    header = {"dims": list(labels.dims), "dtype": "u32"}
    return Response(
        content=labels.labels.astype("<u4").tobytes(),
        media_type="application/octet-stream",
        headers={"X-Raster": json.dumps(header)},
    )


def create_app(config: ServiceConfig | None = None, workflow: Workflow | None = None) -> FastAPI:
    config = config or ServiceConfig.load()
    wf = workflow or Workflow(config)
    app = FastAPI(title="tileseg service")
    app.state.workflow = wf
    # the browser client is served as static files from wherever; it needs to
    # read the raster header across origins
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["X-Raster"],
    )

    def _error(status: int):
        def handler(_request, exc):
            return JSONResponse(
                status_code=status,
                content={"error": type(exc).__name__, "message": str(exc)},
            )

        return handler

    app.add_exception_handler(NotFoundError, _error(404))
    app.add_exception_handler(ConflictError, _error(409))
    app.add_exception_handler(ValueError, _error(400))

    # -- projects ----------------------------------------------------------

    @app.get("/projects")
    def list_projects():
        return {"projects": sorted(wf.projects)}

    @app.post("/projects")
    async def create_project(
        request: Request,
        tile: int | None = Query(default=None),
        overlap: float | None = Query(default=None),
        border: float | None = Query(default=None),
        k: int | None = Query(default=None),
    ):
        header = _parse_raster_header(request)
        if header["dtype"] == "u32":
            raise ValueError("volumes are u8 or u16; u32 is for label rasters")
        values = _decode_body(await request.body(), header)
        spacing = tuple(float(s) for s in header.get("spacing", (1.0, 1.0, 1.0)))
        volume = Volume3D(header["dims"], values, spacing)
        project = wf.create_project(
            volume,
            tile_size=tile,
            overlap_fraction=overlap,
            border_fraction=border,
            k=k,
        )
        return wf.project_info(project.id)

    @app.post("/projects/{pid}/presegmentation", status_code=204)
    async def set_presegmentation(pid: str, request: Request):
        header = _parse_raster_header(request)
        if header["dtype"] != "u32":
            raise ValueError("pre-segmentation rasters are u32")
        values = _decode_body(await request.body(), header)
        wf.set_presegmentation(pid, LabelMap(header["dims"], values))
        return Response(status_code=204)

    @app.get("/projects/{pid}")
    def project_info(pid: str):
        return wf.project_info(pid)

    @app.get("/projects/{pid}/next-tile")
    def next_tile(pid: str, user: str):
        descriptor = wf.next_tile(pid, user)
        return {"tile": None} if descriptor is None else descriptor

    # -- sessions ----------------------------------------------------------

    @app.get("/sessions/{token}/volume")
    def session_volume(token: str):
        return _volume_response(wf.session_volume(token))

    @app.get("/sessions/{token}/labels")
    def session_labels(token: str):
        return _labels_response(wf.session_labels(token))

    @app.post("/sessions/{token}/ops")
    async def session_op(token: str, request: Request):
        payload = await request.json()
        return wf.apply_op(token, payload)

    @app.post("/sessions/{token}/finish")
    async def session_finish(token: str, request: Request):
        payload = await request.json()
        if not isinstance(payload, dict) or "verdict" not in payload:
            raise ValueError("finish payload needs a 'verdict' field")
        return wf.finish(token, payload["verdict"])

    @app.get("/sessions/{token}/meshes")
    def session_meshes(
        token: str,
        smooth: int = Query(default=3),
        lam: float = Query(default=0.5),
    ):
        return wf.session_meshes(token, smooth, lam)

    # -- consensus, stitching, scores -------------------------------------

    @app.get("/projects/{pid}/tiles/{tile_id}/consensus")
    def tile_consensus(pid: str, tile_id: int):
        _, meta = wf.consensus(pid, tile_id)
        return meta

    @app.get("/projects/{pid}/tiles/{tile_id}/consensus/labels")
    def tile_consensus_labels(pid: str, tile_id: int):
        labels, _ = wf.consensus(pid, tile_id)
        return _labels_response(labels)

    @app.get("/projects/{pid}/tiles/{tile_id}/meshes")
    def tile_meshes(
        pid: str,
        tile_id: int,
        smooth: int = Query(default=3),
        lam: float = Query(default=0.5),
    ):
        return wf.tile_meshes(pid, tile_id, smooth, lam)

    @app.get("/projects/{pid}/stitched")
    def stitched(pid: str, partial: bool = Query(default=False)):
        return _labels_response(wf.stitched(pid, partial=partial))

    @app.get("/projects/{pid}/scores")
    def scores(pid: str):
        return wf.scores(pid)

    return app
