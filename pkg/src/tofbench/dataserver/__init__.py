"""Remote data access: framed TCP protocol, file/live servers, client."""

from .frames import (
    MAX_PAYLOAD,
    PROTOCOL_VERSION,
    Delta,
    ErrorCode,
    Frame,
    LiveCommand,
    LiveStatus,
    MsgType,
    NeedMoreBytes,
    ProtocolError,
    RunEntry,
    decode_frame,
    encode_frame,
)
from .stream import FrameStream, RemoteError
from .fileserver import FileServer, scan_runs, serve_files
from .liveserver import LiveServer, LiveSimulator, LiveState, serve_live
from .client import DataClient, client_fetch, client_subscribe

__all__ = [
    "MAX_PAYLOAD",
    "PROTOCOL_VERSION",
    "DataClient",
    "Delta",
    "ErrorCode",
    "FileServer",
    "Frame",
    "FrameStream",
    "LiveCommand",
    "LiveServer",
    "LiveSimulator",
    "LiveState",
    "LiveStatus",
    "MsgType",
    "NeedMoreBytes",
    "ProtocolError",
    "RemoteError",
    "RunEntry",
    "client_fetch",
    "client_subscribe",
    "decode_frame",
    "encode_frame",
    "scan_runs",
    "serve_files",
    "serve_live",
]
