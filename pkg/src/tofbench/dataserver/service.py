"""Threaded TCP scaffolding shared by the file and live servers.

Each connection gets its own thread and starts with a HELLO exchange; the
handler loop then answers one request frame at a time until BYE or close.
A fault in one connection is answered with an ERROR frame where possible
and never takes the server down.
"""

from __future__ import annotations

import logging
import socketserver
import threading
from typing import Optional

from ..retrievers import RunFileError, SelectionError
from .frames import (
    PROTOCOL_VERSION,
    ErrorCode,
    Frame,
    MsgType,
    ProtocolError,
    decode_hello,
    encode_error,
    encode_hello,
)
from .stream import FrameStream

__all__ = ["FrameServer", "FrameRequestHandler"]

log = logging.getLogger(__name__)


class FrameRequestHandler(socketserver.BaseRequestHandler):
    """One connection: handshake, then a request/reply loop.

    Subclasses implement `dispatch(stream, frame)`; raising ProtocolError,
    RunFileError, or FileNotFoundError inside it becomes an ERROR frame on
    the wire and the connection stays up.
    """

    server_name = "tofbench"

    def handle(self) -> None:
        stream = FrameStream(self.request)
        try:
            if not self._handshake(stream):
                return
            self._serve(stream)
        except (ConnectionError, OSError, ProtocolError, BrokenPipeError):
            # peer vanished or sent garbage that desynchronized the stream;
            # this connection is done but the server must keep running
            log.debug("connection dropped", exc_info=True)

    def _handshake(self, stream: FrameStream) -> bool:
        frame = stream.recv_frame()
        if frame is None:
            return False
        if frame.msg_type is not MsgType.HELLO:
            stream.send_frame(
                encode_error(ErrorCode.BAD_REQUEST, "connection must open with HELLO")
            )
            return False
        try:
            version, _client_name = decode_hello(frame)
        except ProtocolError as e:
            stream.send_frame(encode_error(e.code, str(e)))
            return False
        if version != PROTOCOL_VERSION:
            stream.send_frame(
                encode_error(
                    ErrorCode.VERSION_MISMATCH,
                    f"protocol version {version} not supported, server speaks"
                    f" {PROTOCOL_VERSION}",
                )
            )
            return False
        stream.send_frame(encode_hello(PROTOCOL_VERSION, self.server_name))
        return True

    def _serve(self, stream: FrameStream) -> None:
        while True:
            try:
                frame = stream.recv_frame()
            except ProtocolError as e:
                stream.send_frame(encode_error(e.code, str(e)))
                if e.consumed:
                    continue  # bad frame skipped, stream still framed
                return
            if frame is None or frame.msg_type is MsgType.BYE:
                return
            try:
                self.dispatch(stream, frame)
            except ProtocolError as e:
                stream.send_frame(encode_error(e.code, str(e)))
            except FileNotFoundError as e:
                stream.send_frame(encode_error(ErrorCode.NOT_FOUND, str(e)))
            except SelectionError as e:
                stream.send_frame(encode_error(ErrorCode.BAD_REQUEST, str(e)))
            except RunFileError as e:
                stream.send_frame(encode_error(ErrorCode.SERVER_ERROR, str(e)))
            except (ConnectionError, BrokenPipeError):
                raise
            except Exception as e:  # noqa: BLE001 - report, never crash the server
                log.warning("request failed", exc_info=True)
                stream.send_frame(
                    encode_error(ErrorCode.SERVER_ERROR, f"{type(e).__name__}: {e}")
                )

    def dispatch(self, stream: FrameStream, frame: Frame) -> None:
        raise NotImplementedError


class _ThreadedTCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class FrameServer:
    """A running threaded TCP server; use as a context manager or close()."""

    def __init__(self, handler_cls, host: str = "127.0.0.1", port: int = 0):
        self._server = _ThreadedTCPServer((host, port), handler_cls)
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "FrameServer":
        self._thread = threading.Thread(
            target=self._server.serve_forever,
            kwargs={"poll_interval": 0.05},
            daemon=True,
        )
        self._thread.start()
        return self

    @property
    def host(self) -> str:
        return self._server.server_address[0]

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def address(self) -> tuple:
        return (self.host, self.port)

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def __enter__(self) -> "FrameServer":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()
