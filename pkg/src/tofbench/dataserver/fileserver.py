"""TCP server publishing a directory of run files.

Requests: LIST_RUNS (no payload), RUN_INFO(run name), GET_DATA(run name,
selection).  Run names are bare filenames inside the served root; anything
path-like is rejected rather than resolved.  GET_DATA reads only the
selected blocks from disk (the run-file reader seeks over everything
else), so the bytes sent scale with the selection, not the file.
"""

from __future__ import annotations

import os
from pathlib import Path

from ..retrievers import probe, read_runfile
from .frames import (
    ErrorCode,
    Frame,
    MsgType,
    ProtocolError,
    RunEntry,
    decode_data_request,
    decode_run_info_request,
    encode_chunked,
    encode_data_body,
    encode_directory,
    encode_run_list,
)
from .service import FrameRequestHandler, FrameServer
from .stream import FrameStream

__all__ = ["FileServer", "scan_runs", "serve_files"]


class _FileHandler(FrameRequestHandler):
    server_name = "tofbench-files"

    @property
    def root(self) -> Path:
        return self.server.root_dir  # type: ignore[attr-defined]

    def dispatch(self, stream: FrameStream, frame: Frame) -> None:
        if frame.msg_type is MsgType.LIST_RUNS:
            stream.send_frame(encode_run_list(scan_runs(self.root)))
        elif frame.msg_type is MsgType.RUN_INFO:
            path = self._resolve(decode_run_info_request(frame))
            stream.send_frame(encode_directory(probe(path)))
        elif frame.msg_type is MsgType.GET_DATA:
            run_name, sel = decode_data_request(frame)
            datasets = read_runfile(self._resolve(run_name), sel)
            body = encode_data_body(0, datasets)
            stream.send(*encode_chunked(MsgType.GET_DATA, body))
        else:
            raise ProtocolError(
                ErrorCode.BAD_REQUEST,
                f"file server does not handle {frame.msg_type.name}",
            )

    def _resolve(self, run_name: str) -> Path:
        if not run_name or run_name != os.path.basename(run_name) or run_name.startswith("."):
            raise ProtocolError(
                ErrorCode.BAD_REQUEST, f"run name {run_name!r} is not a bare filename"
            )
        path = self.root / run_name
        if not path.is_file():
            raise FileNotFoundError(f"no run file named {run_name!r}")
        return path


def scan_runs(root: Path) -> list[RunEntry]:
    """Probe every .trf file under root, sorted by name.

    Files that fail to probe are silently skipped: a served directory may
    legitimately contain half-written files or unrelated data.
    """
    entries = []
    for path in sorted(root.glob("*.trf")):
        try:
            directory = probe(path)
        except Exception:
            continue  # not a readable run file; listing skips it
        entries.append(
            RunEntry(
                filename=path.name,
                instrument=directory.instrument,
                run_number=directory.run_number,
                start_time=directory.start_time,
                n_datasets=directory.n_datasets,
                file_size=path.stat().st_size,
            )
        )
    return entries


class FileServer(FrameServer):
    def __init__(self, root_dir, host: str = "127.0.0.1", port: int = 0):
        root = Path(root_dir)
        if not root.is_dir():
            raise ValueError(f"served root {root_dir!r} is not a directory")
        super().__init__(_FileHandler, host, port)
        self._server.root_dir = root  # type: ignore[attr-defined]


def serve_files(root_dir, port: int = 0, host: str = "127.0.0.1") -> FileServer:
    """Start serving `root_dir` on its own thread; returns the running server."""
    return FileServer(root_dir, host=host, port=port).start()
