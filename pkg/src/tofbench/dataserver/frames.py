"""Framed binary wire protocol shared by the file and live data servers.

Every message on the wire is one frame:

    u32 payload length (little-endian) | u8 message type | payload

Payload encodings reuse the run-file record primitives (strings are u16
length + UTF-8, arrays are little-endian) so there is exactly one
serialization of spectra and directory entries to maintain.

Bulk replies (data fetches, live deltas) can exceed the frame cap, so
their logical body is split across several frames of the same type; each
chunk payload starts with a one-byte continuation flag (1 = more chunks
follow).  `encode_chunked` / `split_chunk` handle both directions.

Decoding never allocates based on an untrusted length field: the length
is checked against MAX_PAYLOAD before any payload bytes are touched, so a
corrupted frame costs at most a bounded error, not memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, Optional, Sequence

import numpy as np

from ..dataset import DataSet
from ..retrievers.records import ByteReader, ByteWriter, ShortBuffer
from ..retrievers.runfile import (
    DatasetKind,
    DirectoryEntry,
    LoadSelection,
    RunFileDirectory,
    RunFileError,
    _dataset_n_bins,
    decode_dataset_block,
    encode_dataset_block,
)

__all__ = [
    "PROTOCOL_VERSION",
    "MAX_PAYLOAD",
    "MsgType",
    "ErrorCode",
    "Frame",
    "NeedMoreBytes",
    "ProtocolError",
    "encode_frame",
    "decode_frame",
    "encode_hello",
    "decode_hello",
    "RunEntry",
    "encode_run_list",
    "decode_run_list",
    "encode_run_info_request",
    "decode_run_info_request",
    "encode_directory",
    "decode_directory",
    "encode_data_request",
    "decode_data_request",
    "encode_data_body",
    "decode_data_body",
    "encode_subscribe",
    "decode_subscribe",
    "Delta",
    "encode_delta_body",
    "decode_delta_body",
    "LiveCommand",
    "LiveStatus",
    "encode_status_request",
    "decode_status_request",
    "encode_status_reply",
    "decode_status_reply",
    "encode_error",
    "decode_error",
    "encode_chunked",
    "split_chunk",
    "iter_chunk_bodies",
]

PROTOCOL_VERSION = 1

# Hard cap on a single frame's payload; bounds what either side must buffer.
MAX_PAYLOAD = 64 * 2**20


class MsgType(IntEnum):
    HELLO = 0
    LIST_RUNS = 1
    RUN_INFO = 2
    GET_DATA = 3
    SUBSCRIBE = 4
    DELTA = 5
    STATUS = 6
    ERROR = 7
    BYE = 8


class ErrorCode(IntEnum):
    BAD_FRAME = 1  # payload did not parse, or stream died mid-frame
    UNKNOWN_TYPE = 2
    FRAME_TOO_LARGE = 3
    VERSION_MISMATCH = 4
    NOT_FOUND = 5
    BAD_REQUEST = 6
    SERVER_ERROR = 7


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    payload: bytes = b""

    def __post_init__(self) -> None:
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(
                f"payload of {len(self.payload)} bytes exceeds the"
                f" {MAX_PAYLOAD}-byte frame cap"
            )


class NeedMoreBytes(Exception):
    """The buffer holds a frame prefix; `needed` more bytes complete it."""

    def __init__(self, needed: int):
        super().__init__(f"need {needed} more bytes")
        self.needed = needed


class ProtocolError(Exception):
    """A wire-level fault, tagged with the code an ERROR frame would carry.

    `consumed` > 0 means the faulty frame's extent is known and the caller
    may skip it and stay on the stream; 0 means framing is unrecoverable.
    """

    def __init__(self, code: ErrorCode, message: str, consumed: int = 0):
        super().__init__(message)
        self.code = ErrorCode(code)
        self.consumed = consumed


def encode_frame(frame: Frame) -> bytes:
    w = ByteWriter()
    w.u32(len(frame.payload))
    w.u8(int(frame.msg_type))
    w.raw(frame.payload)
    return w.getvalue()


def decode_frame(buf) -> tuple[Frame, int]:
    """Decode one frame from the head of `buf`; returns (frame, bytes used).

    Raises NeedMoreBytes when the buffer holds only a prefix, and
    ProtocolError for an oversized length or unknown message type.
    """
    n = len(buf)
    if n < 5:
        raise NeedMoreBytes(5 - n)
    length = int.from_bytes(buf[:4], "little")
    if length > MAX_PAYLOAD:
        raise ProtocolError(
            ErrorCode.FRAME_TOO_LARGE,
            f"frame claims {length}-byte payload, cap is {MAX_PAYLOAD}",
        )
    total = 5 + length
    if n < total:
        raise NeedMoreBytes(total - n)
    raw_type = buf[4]
    if raw_type not in MsgType._value2member_map_:
        raise ProtocolError(
            ErrorCode.UNKNOWN_TYPE,
            f"unknown message type {raw_type}",
            consumed=total,
        )
    return Frame(MsgType(raw_type), bytes(buf[5:total])), total


class _PayloadReader:
    """ByteReader over a frame payload that speaks ProtocolError.

    Checks the frame type up front and converts record-level failures
    (short buffer, bad UTF-8, bad tags) into BAD_FRAME errors so callers
    see one exception vocabulary.
    """

    def __init__(self, frame: Frame, expect: MsgType):
        if frame.msg_type is not expect:
            raise ProtocolError(
                ErrorCode.BAD_FRAME,
                f"expected {expect.name} frame, got {frame.msg_type.name}",
            )
        self.r = ByteReader(frame.payload)
        self._what = expect.name

    def __enter__(self) -> ByteReader:
        return self.r

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc is None:
            if self.r.remaining:
                raise ProtocolError(
                    ErrorCode.BAD_FRAME,
                    f"{self._what} payload has {self.r.remaining} trailing bytes",
                )
            return False
        if isinstance(exc, (ShortBuffer, UnicodeDecodeError, ValueError, RunFileError)):
            raise ProtocolError(
                ErrorCode.BAD_FRAME, f"malformed {self._what} payload: {exc}"
            ) from exc
        return False


# -- handshake ------------------------------------------------------------------


def encode_hello(version: int = PROTOCOL_VERSION, name: str = "") -> Frame:
    w = ByteWriter()
    w.u32(version)
    w.string(name)
    return Frame(MsgType.HELLO, w.getvalue())


def decode_hello(frame: Frame) -> tuple[int, str]:
    with _PayloadReader(frame, MsgType.HELLO) as r:
        return r.u32(), r.string()


# -- run directory listing --------------------------------------------------------


@dataclass(frozen=True)
class RunEntry:
    """One run file as the server lists it."""

    filename: str
    instrument: str
    run_number: int
    start_time: int
    n_datasets: int
    file_size: int


def encode_run_list(entries: Sequence[RunEntry]) -> Frame:
    w = ByteWriter()
    w.u32(len(entries))
    for e in entries:
        w.string(e.filename)
        w.string(e.instrument)
        w.u32(e.run_number)
        w.i64(e.start_time)
        w.u32(e.n_datasets)
        w.u64(e.file_size)
    return Frame(MsgType.LIST_RUNS, w.getvalue())


def decode_run_list(frame: Frame) -> list[RunEntry]:
    with _PayloadReader(frame, MsgType.LIST_RUNS) as r:
        n = r.u32()
        return [
            RunEntry(r.string(), r.string(), r.u32(), r.i64(), r.u32(), r.u64())
            for _ in range(n)
        ]


def encode_run_info_request(run_name: str) -> Frame:
    w = ByteWriter()
    w.string(run_name)
    return Frame(MsgType.RUN_INFO, w.getvalue())


def decode_run_info_request(frame: Frame) -> str:
    with _PayloadReader(frame, MsgType.RUN_INFO) as r:
        return r.string()


def encode_directory(directory: RunFileDirectory) -> Frame:
    w = ByteWriter()
    w.string(directory.instrument)
    w.u32(directory.run_number)
    w.i64(directory.start_time)
    w.u32(len(directory.entries))
    for e in directory.entries:
        w.string(e.name)
        w.u8(int(e.kind))
        w.u32(e.n_spectra)
        w.u32(e.n_bins)
        w.u64(e.offset)
        w.u64(e.length)
    return Frame(MsgType.RUN_INFO, w.getvalue())


def decode_directory(frame: Frame) -> RunFileDirectory:
    with _PayloadReader(frame, MsgType.RUN_INFO) as r:
        instrument = r.string()
        run_number = r.u32()
        start_time = r.i64()
        n = r.u32()
        entries = tuple(
            DirectoryEntry(
                r.string(), DatasetKind(r.u8()), r.u32(), r.u32(), r.u64(), r.u64()
            )
            for _ in range(n)
        )
        return RunFileDirectory(instrument, run_number, start_time, entries)


# -- data fetch -------------------------------------------------------------------


def encode_data_request(run_name: str, sel: Optional[LoadSelection] = None) -> Frame:
    w = ByteWriter()
    w.string(run_name)
    if sel is None:
        sel = LoadSelection()
    for axis in (sel.dataset_indices, sel.spectrum_ids):
        if axis is None:
            w.u8(0)
        else:
            w.u8(1)
            vals = [int(v) for v in axis]
            w.u32(len(vals))
            for v in vals:
                w.u32(v)
    if sel.bin_range is None:
        w.u8(0)
    else:
        lo, hi = sel.bin_range
        w.u8(1)
        w.u32(int(lo))
        w.u32(int(hi))
    return Frame(MsgType.GET_DATA, w.getvalue())


def decode_data_request(frame: Frame) -> tuple[str, LoadSelection]:
    with _PayloadReader(frame, MsgType.GET_DATA) as r:
        run_name = r.string()
        axes: list[Optional[tuple]] = []
        for _ in range(2):
            if r.u8():
                axes.append(tuple(r.u32() for _ in range(r.u32())))
            else:
                axes.append(None)
        bin_range = (r.u32(), r.u32()) if r.u8() else None
        return run_name, LoadSelection(axes[0], axes[1], bin_range)


def encode_data_body(sequence: int, datasets: Sequence[DataSet]) -> bytes:
    """Logical GET_DATA reply body: a sequence stamp plus dataset blocks.

    File fetches stamp sequence 0; the live server stamps its tick counter
    so a snapshot can anchor a delta subscription.
    """
    w = ByteWriter()
    w.u64(sequence)
    w.u32(len(datasets))
    for ds in datasets:
        block = encode_dataset_block(ds)
        w.string(ds.title)
        w.u32(len(ds.spectra))
        w.u32(_dataset_n_bins(ds))
        w.u64(len(block))
        w.raw(block)
    return w.getvalue()


def decode_data_body(body: bytes) -> tuple[int, list[DataSet]]:
    r = ByteReader(body)
    try:
        sequence = r.u64()
        datasets = []
        for _ in range(r.u32()):
            name = r.string()
            n_spectra = r.u32()
            n_bins = r.u32()
            block = r.take(r.u64())
            datasets.append(decode_dataset_block(block, name, n_spectra, n_bins))
    except (ShortBuffer, UnicodeDecodeError, ValueError, RunFileError) as exc:
        raise ProtocolError(
            ErrorCode.BAD_FRAME, f"malformed data body: {exc}"
        ) from exc
    if r.remaining:
        raise ProtocolError(
            ErrorCode.BAD_FRAME, f"data body has {r.remaining} trailing bytes"
        )
    return sequence, datasets


# -- live subscription --------------------------------------------------------------


def encode_subscribe(since_sequence: int) -> Frame:
    w = ByteWriter()
    w.u64(since_sequence)
    return Frame(MsgType.SUBSCRIBE, w.getvalue())


def decode_subscribe(frame: Frame) -> int:
    with _PayloadReader(frame, MsgType.SUBSCRIBE) as r:
        return r.u64()


@dataclass(frozen=True)
class Delta:
    """Bins whose accumulated counts changed, with their new absolute values.

    Applying a delta means assignment, not addition, so replaying any
    suffix of deltas onto an older snapshot converges to the newer one.
    """

    sequence: int
    spectra: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint32))
    bins: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint32))
    values: np.ndarray = field(default_factory=lambda: np.empty(0, np.float32))

    def __post_init__(self) -> None:
        if not (len(self.spectra) == len(self.bins) == len(self.values)):
            raise ValueError("delta index/value arrays must have equal length")

    def __len__(self) -> int:
        return len(self.values)


def encode_delta_body(delta: Delta) -> bytes:
    w = ByteWriter()
    w.u64(delta.sequence)
    w.u32(len(delta))
    w.u32_array(np.asarray(delta.spectra))
    w.u32_array(np.asarray(delta.bins))
    w.f32_array(np.asarray(delta.values))
    return w.getvalue()


def decode_delta_body(body: bytes) -> Delta:
    r = ByteReader(body)
    try:
        sequence = r.u64()
        n = r.u32()
        delta = Delta(sequence, r.u32_array(n), r.u32_array(n), r.f32_array(n))
    except (ShortBuffer, ValueError) as exc:
        raise ProtocolError(
            ErrorCode.BAD_FRAME, f"malformed delta body: {exc}"
        ) from exc
    if r.remaining:
        raise ProtocolError(
            ErrorCode.BAD_FRAME, f"delta body has {r.remaining} trailing bytes"
        )
    return delta


# -- live status / control -----------------------------------------------------------


class LiveCommand(IntEnum):
    QUERY = 0
    PAUSE = 1
    RESUME = 2
    STEP = 3


@dataclass(frozen=True)
class LiveStatus:
    running: bool
    sequence: int
    elapsed_s: float
    total_counts: float


def encode_status_request(command: LiveCommand = LiveCommand.QUERY, arg: int = 0) -> Frame:
    w = ByteWriter()
    w.u8(int(command))
    w.u32(arg)
    return Frame(MsgType.STATUS, w.getvalue())


def decode_status_request(frame: Frame) -> tuple[LiveCommand, int]:
    with _PayloadReader(frame, MsgType.STATUS) as r:
        raw = r.u8()
        if raw not in LiveCommand._value2member_map_:
            raise ValueError(f"unknown live command {raw}")
        return LiveCommand(raw), r.u32()


def encode_status_reply(status: LiveStatus) -> Frame:
    w = ByteWriter()
    w.u8(1 if status.running else 0)
    w.u64(status.sequence)
    w.f64(status.elapsed_s)
    w.f64(status.total_counts)
    return Frame(MsgType.STATUS, w.getvalue())


def decode_status_reply(frame: Frame) -> LiveStatus:
    with _PayloadReader(frame, MsgType.STATUS) as r:
        return LiveStatus(bool(r.u8()), r.u64(), r.f64(), r.f64())


# -- errors ---------------------------------------------------------------------------


def encode_error(code: ErrorCode, message: str) -> Frame:
    w = ByteWriter()
    w.u16(int(code))
    w.string(message[:0xFFFF])
    return Frame(MsgType.ERROR, w.getvalue())


def decode_error(frame: Frame) -> tuple[ErrorCode, str]:
    with _PayloadReader(frame, MsgType.ERROR) as r:
        raw = r.u16()
        code = ErrorCode(raw) if raw in ErrorCode._value2member_map_ else ErrorCode.SERVER_ERROR
        return code, r.string()


# -- chunking ---------------------------------------------------------------------------

# Leave room for the continuation flag byte inside each payload.
_CHUNK_BYTES = MAX_PAYLOAD - 1


def encode_chunked(msg_type: MsgType, body: bytes, chunk_bytes: int = _CHUNK_BYTES) -> list[bytes]:
    """Split a logical body into ready-to-send frames of one type.

    Every chunk payload is a continuation flag byte plus a slice of the
    body; the final chunk carries flag 0.  An empty body still produces
    one frame so the receiver always sees a terminator.
    """
    if not 1 <= chunk_bytes <= _CHUNK_BYTES:
        raise ValueError(f"chunk size must be in [1, {_CHUNK_BYTES}], got {chunk_bytes}")
    pieces = [body[i : i + chunk_bytes] for i in range(0, len(body), chunk_bytes)] or [b""]
    out = []
    for i, piece in enumerate(pieces):
        flag = b"\x01" if i + 1 < len(pieces) else b"\x00"
        out.append(encode_frame(Frame(msg_type, flag + piece)))
    return out


def split_chunk(frame: Frame) -> tuple[bool, bytes]:
    """Return (more chunks follow, piece) for one chunked frame."""
    if not frame.payload:
        raise ProtocolError(
            ErrorCode.BAD_FRAME, f"{frame.msg_type.name} chunk missing continuation flag"
        )
    flag = frame.payload[0]
    if flag not in (0, 1):
        raise ProtocolError(
            ErrorCode.BAD_FRAME, f"bad continuation flag {flag} in {frame.msg_type.name} chunk"
        )
    return bool(flag), frame.payload[1:]


def iter_chunk_bodies(frames: Iterator[Frame]) -> bytes:
    """Drain `frames` until a terminating chunk and return the joined body."""
    parts = []
    for frame in frames:
        more, piece = split_chunk(frame)
        parts.append(piece)
        if not more:
            return b"".join(parts)
    raise ProtocolError(ErrorCode.BAD_FRAME, "chunk stream ended without terminator")
