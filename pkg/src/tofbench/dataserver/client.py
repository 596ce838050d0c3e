"""Blocking client for the file and live data servers.

One DataClient owns one connection; every method is one request/reply
exchange, except subscribe(), which turns the connection into a delta
stream until the iterator is closed.
"""

from __future__ import annotations

import socket
from typing import Iterator, Optional, Sequence

from ..dataset import DataSet
from ..retrievers import LoadSelection, RunFileDirectory
from .frames import (
    PROTOCOL_VERSION,
    Delta,
    ErrorCode,
    Frame,
    LiveCommand,
    LiveStatus,
    MsgType,
    ProtocolError,
    RunEntry,
    decode_data_body,
    decode_delta_body,
    decode_directory,
    decode_error,
    decode_hello,
    decode_run_list,
    decode_status_reply,
    encode_data_request,
    encode_hello,
    encode_run_info_request,
    encode_status_request,
    encode_subscribe,
)
from .stream import FrameStream, RemoteError

__all__ = ["DataClient", "client_fetch", "client_subscribe"]


class DataClient:
    """A connected protocol client; use as a context manager or close()."""

    def __init__(
        self,
        host: str,
        port: int,
        *,
        client_name: str = "tofbench-client",
        timeout: Optional[float] = 10.0,
    ):
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(timeout)
        self._stream = FrameStream(sock)
        self._subscribed = False
        self._closed = False
        try:
            self._stream.send_frame(encode_hello(PROTOCOL_VERSION, client_name))
            reply = self._stream.recv_frame()
            if reply is None:
                raise ProtocolError(
                    ErrorCode.BAD_FRAME, "server closed the connection during handshake"
                )
            if reply.msg_type is MsgType.ERROR:
                raise RemoteError(*decode_error(reply))
            version, self.server_name = decode_hello(reply)
            if version != PROTOCOL_VERSION:
                raise ProtocolError(
                    ErrorCode.VERSION_MISMATCH,
                    f"server speaks protocol version {version},"
                    f" this client speaks {PROTOCOL_VERSION}",
                )
        except BaseException:
            self._stream.close()
            raise

    @property
    def bytes_received(self) -> int:
        return self._stream.bytes_received

    def _request(self, frame: Frame, reply_type: MsgType) -> Frame:
        if self._subscribed:
            raise RuntimeError("connection is subscribed to the delta stream")
        if self._closed:
            raise RuntimeError("client is closed")
        self._stream.send_frame(frame)
        return self._stream.expect(reply_type)

    def list_runs(self) -> list[RunEntry]:
        return decode_run_list(self._request(Frame(MsgType.LIST_RUNS), MsgType.LIST_RUNS))

    def run_info(self, run_name: str) -> RunFileDirectory:
        return decode_directory(
            self._request(encode_run_info_request(run_name), MsgType.RUN_INFO)
        )

    def fetch(
        self, run_name: str = "", sel: Optional[LoadSelection] = None
    ) -> list[DataSet]:
        """Datasets for a run, honoring the selection server-side."""
        _sequence, datasets = self._fetch_with_sequence(run_name, sel)
        return datasets

    def snapshot(self) -> tuple[int, DataSet]:
        """Live accumulation snapshot: (sequence, dataset)."""
        sequence, datasets = self._fetch_with_sequence("", None)
        if len(datasets) != 1:
            raise ProtocolError(
                ErrorCode.BAD_FRAME,
                f"live snapshot should hold one dataset, got {len(datasets)}",
            )
        return sequence, datasets[0]

    def _fetch_with_sequence(self, run_name, sel) -> tuple[int, list[DataSet]]:
        if self._subscribed:
            raise RuntimeError("connection is subscribed to the delta stream")
        self._stream.send_frame(encode_data_request(run_name, sel))
        return decode_data_body(self._stream.recv_body(MsgType.GET_DATA))

    def status(self) -> LiveStatus:
        return self._control(LiveCommand.QUERY)

    def pause(self) -> LiveStatus:
        return self._control(LiveCommand.PAUSE)

    def resume(self) -> LiveStatus:
        return self._control(LiveCommand.RESUME)

    def step(self, n_ticks: int) -> LiveStatus:
        return self._control(LiveCommand.STEP, n_ticks)

    def _control(self, command: LiveCommand, arg: int = 0) -> LiveStatus:
        return decode_status_reply(
            self._request(encode_status_request(command, arg), MsgType.STATUS)
        )

    def subscribe(self, since_sequence: int) -> Iterator[Delta]:
        """Yield deltas starting with the catch-up for (since, now].

        Sequences are strictly increasing.  The connection is dedicated to
        the stream afterwards; close() the client to stop.
        """
        if self._subscribed:
            raise RuntimeError("connection is already subscribed")
        self._stream.send_frame(encode_subscribe(since_sequence))
        self._subscribed = True
        last = since_sequence
        while True:
            delta = decode_delta_body(self._stream.recv_body(MsgType.DELTA))
            if delta.sequence < last:
                raise ProtocolError(
                    ErrorCode.BAD_FRAME,
                    f"delta sequence went backwards: {last} then {delta.sequence}",
                )
            last = delta.sequence
            yield delta

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._stream.send_frame(Frame(MsgType.BYE))
        except OSError:
            pass
        self._stream.close()

    def __enter__(self) -> "DataClient":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def client_fetch(
    addr: tuple, run_name: str, sel: Optional[LoadSelection] = None
) -> list[DataSet]:
    """One-shot fetch: connect, pull the (possibly partial) run, disconnect."""
    with DataClient(*addr) as client:
        return client.fetch(run_name, sel)


def client_subscribe(addr: tuple, since_sequence: int) -> Iterator[Delta]:
    """One-shot subscription generator; closing it closes the connection."""
    client = DataClient(*addr)
    try:
        yield from client.subscribe(since_sequence)
    finally:
        client.close()
