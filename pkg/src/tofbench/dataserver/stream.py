"""Blocking frame transport over a connected socket.

One FrameStream wraps one socket and owns its receive buffer.  Frames are
decoded incrementally: a partial frame stays buffered until the socket
delivers the rest, and a frame with an unknown type is skipped (its length
field still delimits it) so the stream stays synchronized.
"""

from __future__ import annotations

import socket
from typing import Optional

from .frames import (
    ErrorCode,
    Frame,
    MsgType,
    NeedMoreBytes,
    ProtocolError,
    decode_error,
    decode_frame,
    encode_frame,
    split_chunk,
)

__all__ = ["FrameStream", "RemoteError"]

_RECV_SIZE = 1 << 16


class RemoteError(Exception):
    """The peer answered with an ERROR frame."""

    def __init__(self, code: ErrorCode, message: str):
        super().__init__(f"{code.name}: {message}")
        self.code = code
        self.remote_message = message


class FrameStream:
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buf = bytearray()
        self.bytes_sent = 0
        self.bytes_received = 0

    def send(self, *encoded_frames: bytes) -> None:
        for raw in encoded_frames:
            self._sock.sendall(raw)
            self.bytes_sent += len(raw)

    def send_frame(self, frame: Frame) -> None:
        self.send(encode_frame(frame))

    def recv_frame(self) -> Optional[Frame]:
        """Next frame, or None on a clean close at a frame boundary.

        An unknown-type frame is consumed before the ProtocolError is
        raised, so the caller may report it and keep reading.
        """
        while True:
            try:
                frame, used = decode_frame(self._buf)
            except NeedMoreBytes:
                chunk = self._sock.recv(_RECV_SIZE)
                if not chunk:
                    if self._buf:
                        raise ProtocolError(
                            ErrorCode.BAD_FRAME, "connection closed mid-frame"
                        )
                    return None
                self._buf += chunk
                self.bytes_received += len(chunk)
                continue
            except ProtocolError as e:
                if e.consumed:
                    del self._buf[: e.consumed]
                raise
            del self._buf[:used]
            return frame

    def expect(self, msg_type: MsgType) -> Frame:
        """Receive one frame of the given type; ERROR frames raise RemoteError."""
        frame = self.recv_frame()
        if frame is None:
            raise ProtocolError(
                ErrorCode.BAD_FRAME, f"connection closed awaiting {msg_type.name}"
            )
        if frame.msg_type is MsgType.ERROR:
            raise RemoteError(*decode_error(frame))
        if frame.msg_type is not msg_type:
            raise ProtocolError(
                ErrorCode.BAD_FRAME,
                f"expected {msg_type.name} frame, got {frame.msg_type.name}",
            )
        return frame

    def recv_body(self, msg_type: MsgType) -> bytes:
        """Reassemble one chunked logical body of the given frame type."""
        parts = []
        while True:
            more, piece = split_chunk(self.expect(msg_type))
            parts.append(piece)
            if not more:
                return b"".join(parts)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
