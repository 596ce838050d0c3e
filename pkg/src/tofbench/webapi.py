"""HTTP/JSON gateway between the browser UI and the workbench.

Every endpoint is a stateless adapter: resolve a run file under the served
root, compute the view, serialize.  Bulk arrays (raster color indices,
slice grids) travel base64-encoded so they arrive bit-exact; everything
else is plain JSON.  /api/live upgrades to a websocket and forwards the
live server's delta stream as JSON messages.

Run files are decoded at most once per (path, mtime, size); an interactive
session hammers the same few runs, so a small keyed cache is enough to
keep raster panning cheap without ever serving stale data.
"""

from __future__ import annotations

import asyncio
import base64
import os
from dataclasses import asdict
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from starlette.websockets import WebSocketDisconnect

from .colormap import IntensityScale
from .dataserver import DataClient, ProtocolError, RemoteError, scan_runs
from .dataset import DataSet
from .retrievers import Run, RunFileError, probe, read_run
from .views import (
    Viewport,
    cursor_readout,
    image_raster,
    point_cloud,
    time_slice,
)

__all__ = ["create_app"]


@lru_cache(maxsize=8)
def _cached_run(path: str, mtime_ns: int, size: int) -> Run:
    # mtime and size are cache-key ingredients only; a rewritten file gets
    # a fresh decode, an untouched one is served from memory
    return read_run(path)


def _run_path(root: Path, run: str) -> Path:
    if not run or run != os.path.basename(run) or run.startswith("."):
        raise HTTPException(
            status_code=400, detail=f"run name {run!r} is not a bare filename"
        )
    path = root / run
    if not path.is_file():
        raise HTTPException(status_code=404, detail=f"no run file named {run!r}")
    return path


def _load_run(root: Path, run: str) -> Run:
    path = _run_path(root, run)
    st = path.stat()
    return _cached_run(str(path), st.st_mtime_ns, st.st_size)


def _dataset(run_obj: Run, index: int) -> DataSet:
    if not 0 <= index < len(run_obj.datasets):
        raise HTTPException(
            status_code=404,
            detail=f"dataset index {index} out of range"
            f" (run has {len(run_obj.datasets)} datasets)",
        )
    return run_obj.datasets[index]


def _b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode("ascii")


def _raster_json(rr) -> dict:
    height, width = rr.pixels.shape
    return {
        "width": int(width),
        "height": int(height),
        "pixels": _b64(rr.pixels.tobytes()),
        "row_map": rr.row_map.tolist(),
        "col_map": rr.col_map.tolist(),
        "value_range": [rr.value_range[0], rr.value_range[1]],
    }


def create_app(
    root_dir,
    live_addr: Optional[tuple] = None,
    frontend_dir=None,
) -> FastAPI:
    """Build the API app serving run files under `root_dir`.

    live_addr is the (host, port) of a running live data server; without
    it /api/live reports the absence and closes.  frontend_dir, when
    given, must be a directory of static UI files to mount at /.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise ValueError(f"served root {root_dir!r} is not a directory")

    app = FastAPI(
        title="tofbench",
        docs_url="/api/docs",
        openapi_url="/api/openapi.json",
    )

    @app.exception_handler(ValueError)
    async def _precondition_failed(_request, exc: ValueError):
        # view and operator preconditions (bad channel, cursor off the
        # raster, mixed bin counts) are client errors, not crashes
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(RunFileError)
    async def _unreadable_file(_request, exc: RunFileError):
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/api/runs")
    def api_runs() -> list:
        return [asdict(e) for e in scan_runs(root)]

    @app.get("/api/runs/{run}/datasets")
    def api_datasets(run: str) -> dict:
        directory = probe(_run_path(root, run))
        return {
            "run": run,
            "instrument": directory.instrument,
            "run_number": directory.run_number,
            "start_time": directory.start_time,
            "datasets": [
                {
                    "index": i,
                    "name": e.name,
                    "kind": e.kind.name.lower(),
                    "n_spectra": e.n_spectra,
                    "n_bins": e.n_bins,
                }
                for i, e in enumerate(directory.entries)
            ],
        }

    def _viewport(width, height, row_offset, col_offset, compress, scale) -> Viewport:
        return Viewport(
            width_px=width,
            height_px=height,
            row_offset=row_offset,
            col_offset=col_offset,
            horizontal_compression=compress,
            intensity_scale=IntensityScale(scale),
        )

    @app.get("/api/raster")
    def api_raster(
        run: str,
        ds: int,
        width: int,
        height: int,
        row_offset: int = 0,
        col_offset: int = 0,
        compress: bool = True,
        scale: str = "linear",
    ) -> dict:
        dataset = _dataset(_load_run(root, run), ds)
        vp = _viewport(width, height, row_offset, col_offset, compress, scale)
        return _raster_json(image_raster(dataset, vp))

    @app.get("/api/spectrum")
    def api_spectrum(run: str, ds: int, id: int) -> dict:
        dataset = _dataset(_load_run(root, run), ds)
        try:
            s = dataset.get(id)
        except KeyError:
            raise HTTPException(
                status_code=404,
                detail=f"no spectrum with id {id} in dataset {ds}",
            ) from None
        return {
            "id": s.id,
            "label": s.label,
            "group_id": s.group_id,
            "x_units": dataset.x_units.value,
            "y_units": dataset.y_units,
            "edges": np.asarray(s.xscale.edges, dtype=np.float64).tolist(),
            "counts": s.counts.tolist(),
            "errors": s.errors.tolist(),
        }

    @app.get("/api/slice")
    def api_slice(run: str, ds: int, channel: int) -> dict:
        dataset = _dataset(_load_run(root, run), ds)
        grid = time_slice(dataset, channel)
        return {
            "channel": channel,
            "n_rows": int(grid.shape[0]),
            "n_cols": int(grid.shape[1]),
            # row-major little-endian f32, exact to the bit
            "values": _b64(np.ascontiguousarray(grid, dtype="<f4").tobytes()),
        }

    @app.get("/api/points")
    def api_points(
        run: str, ds: int, mode: str = "total", channel: Optional[int] = None
    ) -> dict:
        dataset = _dataset(_load_run(root, run), ds)
        if mode == "total":
            points = point_cloud(dataset)
        elif mode == "channel":
            if channel is None:
                raise HTTPException(
                    status_code=400,
                    detail="mode=channel needs a channel query parameter",
                )
            points = point_cloud(dataset, channel)
        else:
            raise HTTPException(
                status_code=400,
                detail=f"unknown mode {mode!r}; use total or channel",
            )
        return {
            "mode": mode,
            "channel": channel if mode == "channel" else None,
            "points": [asdict(p) for p in points],
        }

    @app.get("/api/readout")
    def api_readout(
        run: str,
        ds: int,
        width: int,
        height: int,
        px: int,
        py: int,
        row_offset: int = 0,
        col_offset: int = 0,
        compress: bool = True,
        scale: str = "linear",
    ) -> dict:
        # stateless: the readout recomputes the raster from the same
        # viewport the client rendered, then resolves the cursor in it
        dataset = _dataset(_load_run(root, run), ds)
        vp = _viewport(width, height, row_offset, col_offset, compress, scale)
        rr = image_raster(dataset, vp)
        return asdict(cursor_readout(dataset, rr, px, py))

    @app.websocket("/api/live")
    async def api_live(ws: WebSocket, since: int = 0) -> None:
        await ws.accept()
        if live_addr is None:
            await ws.send_json(
                {"type": "error", "message": "no live data server configured"}
            )
            await ws.close(code=1011)
            return
        loop = asyncio.get_running_loop()
        try:
            # no socket timeout: a paused simulator is silent for as long
            # as the operator leaves it paused
            client = await loop.run_in_executor(
                None,
                lambda: DataClient(
                    *live_addr, client_name="tofbench-web", timeout=None
                ),
            )
        except OSError as exc:
            await ws.send_json(
                {"type": "error", "message": f"live server unreachable: {exc}"}
            )
            await ws.close(code=1011)
            return
        waiter = None
        fetch = None
        try:
            sequence, snap = await loop.run_in_executor(None, client.snapshot)
            await ws.send_json(
                {
                    "type": "meta",
                    "title": snap.title,
                    "x_units": snap.x_units.value,
                    "n_spectra": len(snap.spectra),
                    "n_bins": snap.spectra[0].nbins if snap.spectra else 0,
                    "sequence": sequence,
                }
            )
            deltas = client.subscribe(since)
            # receive() doubles as the disconnect signal; any inbound
            # message also ends the stream (clients reconnect to rewind)
            waiter = asyncio.ensure_future(ws.receive())
            while True:
                fetch = loop.run_in_executor(None, lambda: next(deltas))
                done, _ = await asyncio.wait(
                    {waiter, fetch}, return_when=asyncio.FIRST_COMPLETED
                )
                if waiter in done:
                    break
                delta = fetch.result()
                fetch = None
                await ws.send_json(
                    {
                        "type": "delta",
                        "sequence": delta.sequence,
                        "spectra": delta.spectra.tolist(),
                        "bins": delta.bins.tolist(),
                        "values": delta.values.tolist(),
                    }
                )
        except (RemoteError, ProtocolError, OSError) as exc:
            try:
                await ws.send_json({"type": "error", "message": str(exc)})
                await ws.close(code=1011)
            except (WebSocketDisconnect, RuntimeError, OSError):
                pass
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            if waiter is not None:
                waiter.cancel()
            if fetch is not None:
                fetch.cancel()
            # closing the socket unblocks any executor thread still
            # parked in a recv
            await loop.run_in_executor(None, client.close)

    if frontend_dir is not None:
        static_root = Path(frontend_dir)
        if not static_root.is_dir():
            raise ValueError(
                f"frontend directory {frontend_dir!r} does not exist"
            )
        app.mount("/", StaticFiles(directory=static_root, html=True), name="ui")

    return app
