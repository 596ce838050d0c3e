"""Live-acquisition server: a simulated detector feed behind the frame protocol.

A seeded Poisson simulator accumulates counts into an int64 array shaped
like the target pattern (expected counts/sec/bin per spectrum).  Every
tick bumps a sequence number and records which bins changed, so a
subscriber can be caught up from any past sequence with one coalesced
delta and then follow per-tick deltas.  Deltas carry absolute values:
applying one is assignment, which makes replay idempotent and exact.

Requests: GET_DATA (ignores its payload, returns sequence + snapshot),
SUBSCRIBE{since}, STATUS (query / pause / resume / step n).  STATUS is
also the control surface so tests can drive time deterministically.
"""

from __future__ import annotations

import collections
import queue
import select
import threading
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..dataset import DataSet
from ..retrievers import read_runfile
from .frames import (
    Delta,
    ErrorCode,
    Frame,
    LiveCommand,
    LiveStatus,
    MsgType,
    ProtocolError,
    decode_status_request,
    decode_subscribe,
    encode_chunked,
    encode_data_body,
    encode_delta_body,
    encode_status_reply,
)
from .service import FrameRequestHandler, FrameServer
from .stream import FrameStream

__all__ = ["LiveState", "LiveSimulator", "LiveServer", "serve_live"]

# Ticks of changed-bin history kept for catch-up; older subscribers get a
# dense delta instead, which is always correct, just bigger.
HISTORY_TICKS = 1024

_MAX_STEP = 10_000


@dataclass(frozen=True)
class LiveState:
    """A consistent view of the acquisition: pattern, totals, clock, sequence."""

    target_pattern: DataSet
    accumulated: DataSet
    elapsed_s: float
    sequence: int


class LiveSimulator:
    """Poisson event accumulation over a rate pattern, one tick at a time.

    All mutation happens under one lock; readers (snapshot, status,
    catch-up deltas) take the same lock so sequence and data are always
    read together.  With a fixed seed the whole history is a function of
    the tick schedule, which tests control via step().
    """

    def __init__(self, pattern: DataSet, rate_scale: float = 1.0, *, seed: int = 0):
        if not pattern.spectra:
            raise ValueError("live pattern must contain at least one spectrum")
        if not rate_scale > 0:
            raise ValueError(f"rate scale must be > 0, got {rate_scale}")
        nbins = pattern.spectra[0].nbins
        for s in pattern.spectra:
            if s.nbins != nbins:
                raise ValueError("live pattern spectra must share one bin count")
        self.pattern = pattern
        rates = np.stack([s.counts for s in pattern.spectra]).astype(np.float64)
        self._rates = np.maximum(rates, 0.0) * rate_scale
        self._acc = np.zeros(self._rates.shape, dtype=np.int64)
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self._sequence = 0
        self._elapsed = 0.0
        self._history: collections.deque = collections.deque(maxlen=HISTORY_TICKS)
        self._listeners: list[queue.SimpleQueue] = []
        self.running = True

    @property
    def n_bins(self) -> int:
        return self._rates.shape[1]

    def tick(self, dt_s: float) -> Delta:
        """Advance simulated time by dt_s; returns this tick's delta."""
        if not dt_s > 0:
            raise ValueError(f"tick duration must be > 0, got {dt_s}")
        with self._lock:
            inc = self._rng.poisson(self._rates * dt_s)
            self._acc += inc
            self._sequence += 1
            self._elapsed += dt_s
            flat = np.flatnonzero(inc).astype(np.uint32)
            self._history.append((self._sequence, flat))
            delta = self._delta_from_flat(self._sequence, flat)
            for q in self._listeners:
                q.put(delta)
            return delta

    def step(self, n_ticks: int, dt_s: float) -> None:
        for _ in range(n_ticks):
            self.tick(dt_s)

    def _delta_from_flat(self, sequence: int, flat: np.ndarray) -> Delta:
        nb = self.n_bins
        return Delta(
            sequence=sequence,
            spectra=(flat // nb).astype(np.uint32),
            bins=(flat % nb).astype(np.uint32),
            values=self._acc.reshape(-1)[flat].astype(np.float32),
        )

    def delta_since(self, since_sequence: int) -> Delta:
        """One coalesced delta carrying everything changed after `since`."""
        with self._lock:
            return self._delta_since_locked(since_sequence)

    def _delta_since_locked(self, since_sequence: int) -> Delta:
        if since_sequence < 0 or since_sequence > self._sequence:
            raise ValueError(
                f"cannot subscribe since sequence {since_sequence}:"
                f" current sequence is {self._sequence}"
            )
        if since_sequence == self._sequence:
            return Delta(self._sequence)
        oldest_covered = self._history[0][0] - 1 if self._history else self._sequence
        if since_sequence < oldest_covered:
            # history no longer reaches back that far: send every bin
            flat = np.arange(self._acc.size, dtype=np.uint32)
        else:
            parts = [f for seq, f in self._history if seq > since_sequence]
            flat = np.unique(np.concatenate(parts)) if parts else np.empty(0, np.uint32)
        return self._delta_from_flat(self._sequence, flat.astype(np.uint32))

    def subscribe(self, since_sequence: int) -> tuple[Delta, queue.SimpleQueue]:
        """Atomically: catch-up delta plus a queue fed by every later tick."""
        with self._lock:
            catch_up = self._delta_since_locked(since_sequence)
            q: queue.SimpleQueue = queue.SimpleQueue()
            self._listeners.append(q)
            return catch_up, q

    def unsubscribe(self, q: queue.SimpleQueue) -> None:
        with self._lock:
            if q in self._listeners:
                self._listeners.remove(q)

    def snapshot(self) -> tuple[int, DataSet]:
        """(sequence, accumulated counts as a dataset), consistent under the lock."""
        with self._lock:
            counts = self._acc.astype(np.float32)
            sequence = self._sequence
        counts.flags.writeable = False
        errors = np.sqrt(counts)
        errors.flags.writeable = False
        spectra = tuple(
            replace(s, counts=counts[i], errors=errors[i])
            for i, s in enumerate(self.pattern.spectra)
        )
        return sequence, replace(self.pattern, spectra=spectra)

    def status(self) -> LiveStatus:
        with self._lock:
            return LiveStatus(
                running=self.running,
                sequence=self._sequence,
                elapsed_s=self._elapsed,
                total_counts=float(self._acc.sum()),
            )

    def state(self) -> LiveState:
        sequence, accumulated = self.snapshot()
        with self._lock:
            elapsed = self._elapsed
        return LiveState(self.pattern, accumulated, elapsed, sequence)


def _pattern_dataset(source) -> DataSet:
    if isinstance(source, DataSet):
        return source
    datasets = read_runfile(source)
    for ds in datasets:
        if ds.spectra and any(s.attr("monitor") != 1 for s in ds.spectra):
            return ds
    for ds in datasets:
        if ds.spectra:
            return ds
    raise ValueError(f"run file {source} contains no usable pattern dataset")


class _LiveHandler(FrameRequestHandler):
    server_name = "tofbench-live"

    @property
    def sim(self) -> LiveSimulator:
        return self.server.simulator  # type: ignore[attr-defined]

    def dispatch(self, stream: FrameStream, frame: Frame) -> None:
        if frame.msg_type is MsgType.GET_DATA:
            sequence, ds = self.sim.snapshot()
            body = encode_data_body(sequence, [ds])
            stream.send(*encode_chunked(MsgType.GET_DATA, body))
        elif frame.msg_type is MsgType.STATUS:
            self._control(stream, frame)
        elif frame.msg_type is MsgType.SUBSCRIBE:
            self._subscription(stream, frame)
        else:
            raise ProtocolError(
                ErrorCode.BAD_REQUEST,
                f"live server does not handle {frame.msg_type.name}",
            )

    def _control(self, stream: FrameStream, frame: Frame) -> None:
        command, arg = decode_status_request(frame)
        sim = self.sim
        if command is LiveCommand.PAUSE:
            sim.running = False
        elif command is LiveCommand.RESUME:
            sim.running = True
        elif command is LiveCommand.STEP:
            if arg > _MAX_STEP:
                raise ProtocolError(
                    ErrorCode.BAD_REQUEST, f"step of {arg} ticks exceeds cap {_MAX_STEP}"
                )
            sim.step(arg, self.server.tick_seconds)  # type: ignore[attr-defined]
        stream.send_frame(encode_status_reply(sim.status()))

    def _subscription(self, stream: FrameStream, frame: Frame) -> None:
        try:
            since = decode_subscribe(frame)
            catch_up, q = self.sim.subscribe(since)
        except ValueError as e:
            raise ProtocolError(ErrorCode.BAD_REQUEST, str(e)) from e
        closing: threading.Event = self.server.closing  # type: ignore[attr-defined]
        try:
            stream.send(*encode_chunked(MsgType.DELTA, encode_delta_body(catch_up)))
            while not closing.is_set():
                readable, _, _ = select.select([self.request], [], [], 0.0)
                if readable:
                    got = stream.recv_frame()
                    if got is None or got.msg_type is MsgType.BYE:
                        return
                    continue  # anything else mid-stream is ignored
                try:
                    delta = q.get(timeout=0.05)
                except queue.Empty:
                    continue
                stream.send(*encode_chunked(MsgType.DELTA, encode_delta_body(delta)))
        finally:
            self.sim.unsubscribe(q)


class LiveServer(FrameServer):
    def __init__(
        self,
        pattern,
        rate_scale: float = 1.0,
        host: str = "127.0.0.1",
        port: int = 0,
        *,
        seed: int = 0,
        tick_seconds: float = 0.5,
        start_paused: bool = False,
    ):
        if not tick_seconds > 0:
            raise ValueError(f"tick interval must be > 0, got {tick_seconds}")
        super().__init__(_LiveHandler, host, port)
        self.simulator = LiveSimulator(
            _pattern_dataset(pattern), rate_scale, seed=seed
        )
        self.simulator.running = not start_paused
        self.tick_seconds = tick_seconds
        self.closing = threading.Event()
        self._server.simulator = self.simulator  # type: ignore[attr-defined]
        self._server.tick_seconds = tick_seconds  # type: ignore[attr-defined]
        self._server.closing = self.closing  # type: ignore[attr-defined]
        self._ticker: Optional[threading.Thread] = None

    def start(self) -> "LiveServer":
        super().start()
        self._ticker = threading.Thread(target=self._run_clock, daemon=True)
        self._ticker.start()
        return self

    def _run_clock(self) -> None:
        while not self.closing.wait(self.tick_seconds):
            if self.simulator.running:
                self.simulator.tick(self.tick_seconds)

    def close(self) -> None:
        self.closing.set()
        if self._ticker is not None:
            self._ticker.join(timeout=5.0)
        super().close()


def serve_live(
    pattern,
    rate_scale: float = 1.0,
    port: int = 0,
    *,
    host: str = "127.0.0.1",
    seed: int = 0,
    tick_seconds: float = 0.5,
    start_paused: bool = False,
) -> LiveServer:
    """Start the simulated acquisition server; returns the running server."""
    return LiveServer(
        pattern,
        rate_scale,
        host,
        port,
        seed=seed,
        tick_seconds=tick_seconds,
        start_paused=start_paused,
    ).start()
