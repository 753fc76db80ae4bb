"""HTTP service for interactive selection of the inner radius.

Serves colorized distance-map previews for a few seeded sample views plus raw
distance readouts, and accepts the confirmed threshold. The caller supplies an
`on_confirm` callback (the CLI persists scene params there); confirmation is
idempotent with last-write-wins.
"""

from __future__ import annotations

import io
import math
import threading
from typing import Callable, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from PIL import Image
from pydantic import BaseModel

from .segmentation import colorize_distance


class SegmentationSession:
    """State shared between the service and the pipeline that launched it."""

    def __init__(
        self,
        distance_maps: dict,
        r_outer: float,
        seed: int = 0,
        n_preview: int = 3,
        on_confirm: Optional[Callable[[float], None]] = None,
    ):
        if not distance_maps:
            raise ValueError("session needs at least one distance map")
        self.distance_maps = dict(distance_maps)
        self.r_outer = float(r_outer)
        self.on_confirm = on_confirm
        ids = sorted(self.distance_maps)
        rng = np.random.default_rng(seed)
        take = min(n_preview, len(ids))
        self.view_ids = sorted(rng.choice(ids, size=take, replace=False).tolist())
        self.confirmed_r_inner: Optional[float] = None
        self.confirmations: list = []
        self.done = threading.Event()

    def confirm(self, r_inner: float):
        self.confirmed_r_inner = float(r_inner)
        self.confirmations.append(float(r_inner))
        if self.on_confirm is not None:
            self.on_confirm(float(r_inner))
        self.done.set()


class ThresholdBody(BaseModel):
    r_inner: float


def _json_value(x: float):
    return float(x) if math.isfinite(x) else None


def create_app(session: SegmentationSession) -> FastAPI:
    app = FastAPI(title="shell segmentation service")

    def get_map(view_id: str):
        dm = session.distance_maps.get(view_id)
        if dm is None or view_id not in session.view_ids:
            raise HTTPException(status_code=404, detail=f"unknown view '{view_id}'")
        return dm

    @app.get("/views")
    def views():
        first = session.distance_maps[session.view_ids[0]]
        return {
            "view_ids": session.view_ids,
            "r_outer": session.r_outer,
            "width": int(first.values.shape[1]),
            "height": int(first.values.shape[0]),
        }

    @app.get("/views/{view_id}/colorized")
    def colorized(view_id: str, clip_max: float):
        dm = get_map(view_id)
        if not math.isfinite(clip_max) or clip_max <= 0:
            raise HTTPException(status_code=400, detail="clip_max must be positive")
        rgb = colorize_distance(dm.values, clip_max)
        buf = io.BytesIO()
        Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/views/{view_id}/distance")
    def distance(view_id: str, u: int, v: int):
        dm = get_map(view_id)
        h, w = dm.values.shape
        if not (0 <= u < w and 0 <= v < h):
            raise HTTPException(
                status_code=400, detail=f"pixel ({u},{v}) outside {w}x{h} map"
            )
        val = float(dm.values[v, u])
        return {
            "view_id": view_id,
            "u": u,
            "v": v,
            "distance": _json_value(val),
            "finite": math.isfinite(val),
        }

    @app.get("/views/{view_id}/distance_grid")
    def distance_grid(view_id: str, size: int = 64):
        dm = get_map(view_id)
        if size < 2 or size > 512:
            raise HTTPException(status_code=400, detail="size must be in [2, 512]")
        h, w = dm.values.shape
        gw = min(size, w)
        gh = min(size, h)
        us = np.linspace(0, w - 1, gw).round().astype(int)
        vs = np.linspace(0, h - 1, gh).round().astype(int)
        grid = dm.values[np.ix_(vs, us)]
        return {
            "view_id": view_id,
            "width": w,
            "height": h,
            "u_coords": us.tolist(),
            "v_coords": vs.tolist(),
            "values": [[_json_value(float(x)) for x in row] for row in grid],
        }

    @app.post("/threshold")
    def threshold(body: ThresholdBody):
        r = body.r_inner
        if not math.isfinite(r) or not (0.0 < r < session.r_outer):
            raise HTTPException(
                status_code=400,
                detail=(
                    f"r_inner must satisfy 0 < r_inner < r_outer "
                    f"({session.r_outer}), got {r}"
                ),
            )
        session.confirm(r)
        return {"status": "ok", "r_inner": r, "confirmations": len(session.confirmations)}

    return app


def serve_until_confirmed(session: SegmentationSession, port: int, host: str = "127.0.0.1"):
    """Run the service until a threshold is confirmed, then shut down."""
    import uvicorn

    app = create_app(session)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    print(
        f"segmentation service on http://{host}:{port} — "
        f"POST /threshold {{\"r_inner\": ...}} to continue",
        flush=True,
    )
    session.done.wait()
    server.should_exit = True
    thread.join(timeout=10)
    return session.confirmed_r_inner
