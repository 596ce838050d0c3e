"""Wire protocol, file/live servers, and the blocking client."""

from __future__ import annotations

import socket
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tofbench.dataset import XUnits, make_uniform_xscale, new_spectrum, DataSet
from tofbench.dataserver import (
    MAX_PAYLOAD,
    PROTOCOL_VERSION,
    DataClient,
    Delta,
    ErrorCode,
    Frame,
    LiveSimulator,
    MsgType,
    NeedMoreBytes,
    ProtocolError,
    RemoteError,
    RunEntry,
    client_fetch,
    client_subscribe,
    decode_frame,
    encode_frame,
    serve_files,
    serve_live,
)
from tofbench.dataserver import frames as fr
from tofbench.retrievers import (
    LoadSelection,
    RunFileDirectory,
    DirectoryEntry,
    read_runfile,
    write_run,
)
from tofbench.retrievers.runfile import DatasetKind
from tofbench.synth import flat_run, powder_run


def _flat_dataset(n_spectra=4, n_bins=16, seed=7) -> DataSet:
    return flat_run(n_spectra=n_spectra, n_bins=n_bins, seed=seed).datasets[0]


def _grid(ds: DataSet) -> np.ndarray:
    return np.stack([s.counts for s in ds.spectra])


def _apply(grid: np.ndarray, delta: Delta) -> None:
    grid[delta.spectra.astype(np.int64), delta.bins.astype(np.int64)] = delta.values


# -- frame codec ------------------------------------------------------------------


def test_frame_round_trips_every_type():
    for mt in MsgType:
        frame = Frame(mt, b"\x01\x02payload")
        decoded, used = decode_frame(encode_frame(frame))
        assert decoded == frame
        assert used == 5 + len(frame.payload)


def test_decode_truncated_frame_reports_missing_bytes():
    raw = encode_frame(Frame(MsgType.HELLO, b"abcdef"))
    with pytest.raises(NeedMoreBytes) as exc:
        decode_frame(raw[:3])
    assert exc.value.needed == 2
    with pytest.raises(NeedMoreBytes) as exc:
        decode_frame(raw[:-4])
    assert exc.value.needed == 4


def test_decode_rejects_oversize_length_without_allocating():
    raw = struct.pack("<IB", MAX_PAYLOAD + 1, 0)
    with pytest.raises(ProtocolError) as exc:
        decode_frame(raw)
    assert exc.value.code is ErrorCode.FRAME_TOO_LARGE


def test_decode_unknown_type_consumes_the_frame():
    raw = struct.pack("<IB", 3, 0xFF) + b"xyz"
    with pytest.raises(ProtocolError) as exc:
        decode_frame(raw + b"rest")
    assert exc.value.code is ErrorCode.UNKNOWN_TYPE
    assert exc.value.consumed == 8


def test_frame_rejects_payload_over_cap():
    with pytest.raises(ValueError, match="frame cap"):
        Frame(MsgType.DELTA, b"\x00" * (MAX_PAYLOAD + 1))


@given(
    mt=st.sampled_from(list(MsgType)),
    payload=st.binary(max_size=300),
    trailing=st.binary(max_size=40),
)
@settings(max_examples=150, deadline=None)
def test_frame_codec_identity_ignores_trailing_bytes(mt, payload, trailing):
    frame = Frame(mt, payload)
    decoded, used = decode_frame(encode_frame(frame) + trailing)
    assert decoded == frame
    assert used == 5 + len(payload)


@given(data=st.binary(max_size=64))
@settings(max_examples=300, deadline=None)
def test_decoder_survives_arbitrary_bytes(data):
    try:
        frame, used = decode_frame(data)
        assert 5 <= used <= len(data)
        assert isinstance(frame, Frame)
    except (NeedMoreBytes, ProtocolError):
        pass


def test_single_byte_length_corruption_is_graceful():
    raw = bytearray(encode_frame(Frame(MsgType.STATUS, b"ab" * 10)))
    for pos in range(4):
        for bit in range(8):
            mutated = bytearray(raw)
            mutated[pos] ^= 1 << bit
            try:
                frame, used = decode_frame(mutated)
                assert used <= len(mutated)
            except NeedMoreBytes as e:
                assert 0 < e.needed <= MAX_PAYLOAD + 5
            except ProtocolError as e:
                assert e.code in (ErrorCode.FRAME_TOO_LARGE, ErrorCode.UNKNOWN_TYPE)


# -- payload codecs -----------------------------------------------------------------


def test_hello_round_trip():
    version, name = fr.decode_hello(fr.encode_hello(1, "bench"))
    assert (version, name) == (1, "bench")


def test_payload_decode_checks_frame_type():
    with pytest.raises(ProtocolError, match="expected HELLO"):
        fr.decode_hello(Frame(MsgType.BYE))


def test_payload_decode_rejects_trailing_bytes():
    frame = fr.encode_hello(1, "x")
    bloated = Frame(MsgType.HELLO, frame.payload + b"!!")
    with pytest.raises(ProtocolError, match="trailing"):
        fr.decode_hello(bloated)


def test_payload_decode_rejects_truncation():
    frame = fr.encode_hello(1, "whole name")
    clipped = Frame(MsgType.HELLO, frame.payload[:-3])
    with pytest.raises(ProtocolError, match="malformed HELLO"):
        fr.decode_hello(clipped)


def test_run_list_round_trip():
    entries = [
        RunEntry("a.trf", "inst", 7, 1234, 3, 999),
        RunEntry("b.trf", "inst", 8, -5, 1, 10),
    ]
    assert fr.decode_run_list(fr.encode_run_list(entries)) == entries
    assert fr.decode_run_list(fr.encode_run_list([])) == []


def test_directory_round_trip():
    directory = RunFileDirectory(
        "gppd",
        42,
        987654,
        (
            DirectoryEntry("monitor", DatasetKind.MONITOR, 1, 50, 128, 400),
            DirectoryEntry("banks", DatasetKind.HISTOGRAM, 4, 50, 528, 1600),
        ),
    )
    assert fr.decode_directory(fr.encode_directory(directory)) == directory


@given(
    ids=st.none() | st.lists(st.integers(0, 2**31), max_size=6),
    dss=st.none() | st.lists(st.integers(0, 100), max_size=4),
    lo=st.integers(0, 1000),
    width=st.integers(0, 1000),
    has_range=st.booleans(),
)
@settings(max_examples=80, deadline=None)
def test_data_request_round_trip(ids, dss, lo, width, has_range):
    sel = LoadSelection(
        dataset_indices=dss,
        spectrum_ids=ids,
        bin_range=(lo, lo + width) if has_range else None,
    )
    name, got = fr.decode_data_request(fr.encode_data_request("run9.trf", sel))
    assert name == "run9.trf"
    expect_ids = None if ids is None else tuple(ids)
    expect_dss = None if dss is None else tuple(dss)
    assert got.spectrum_ids == expect_ids
    assert got.dataset_indices == expect_dss
    assert got.bin_range == ((lo, lo + width) if has_range else None)


def test_data_body_round_trip_preserves_datasets():
    from dataclasses import replace

    run = powder_run(55, 7000, seed=2, n_detectors=8, n_bins=24)
    body = fr.encode_data_body(17, list(run.datasets))
    sequence, datasets = fr.decode_data_body(body)
    assert sequence == 17
    # dataset blocks carry metadata on spectra, like the file format they
    # reuse; dataset-level attributes live in the run header, not here
    assert datasets == [replace(ds, attributes=()) for ds in run.datasets]


def test_data_body_rejects_trailing_and_truncated():
    body = fr.encode_data_body(0, [_flat_dataset(2, 4)])
    with pytest.raises(ProtocolError, match="trailing"):
        fr.decode_data_body(body + b"\x00")
    with pytest.raises(ProtocolError, match="malformed"):
        fr.decode_data_body(body[:-2])


@given(
    seq=st.integers(0, 2**63),
    n=st.integers(0, 50),
    seed=st.integers(0, 2**32 - 1),
)
@settings(max_examples=60, deadline=None)
def test_delta_round_trip(seq, n, seed):
    rng = np.random.default_rng(seed)
    delta = Delta(
        sequence=seq,
        spectra=rng.integers(0, 1000, n).astype(np.uint32),
        bins=rng.integers(0, 1000, n).astype(np.uint32),
        values=rng.random(n).astype(np.float32),
    )
    got = fr.decode_delta_body(fr.encode_delta_body(delta))
    assert got.sequence == seq
    assert np.array_equal(got.spectra, delta.spectra)
    assert np.array_equal(got.bins, delta.bins)
    assert np.array_equal(got.values, delta.values)


def test_delta_requires_matching_lengths():
    with pytest.raises(ValueError, match="equal length"):
        Delta(1, np.zeros(2, np.uint32), np.zeros(1, np.uint32), np.zeros(2, np.float32))


def test_status_round_trips():
    assert fr.decode_status_request(fr.encode_status_request(fr.LiveCommand.STEP, 9)) == (
        fr.LiveCommand.STEP,
        9,
    )
    status = fr.LiveStatus(True, 12, 6.5, 12345.0)
    assert fr.decode_status_reply(fr.encode_status_reply(status)) == status


def test_error_round_trip():
    code, message = fr.decode_error(fr.encode_error(ErrorCode.NOT_FOUND, "gone"))
    assert code is ErrorCode.NOT_FOUND
    assert message == "gone"


def test_subscribe_round_trip():
    assert fr.decode_subscribe(fr.encode_subscribe(987654321)) == 987654321


# -- chunking -----------------------------------------------------------------------


def test_chunking_splits_and_reassembles():
    body = bytes(range(256)) * 5
    raw_frames = fr.encode_chunked(MsgType.GET_DATA, body, chunk_bytes=100)
    assert len(raw_frames) == 13
    frames = []
    for raw in raw_frames:
        frame, used = decode_frame(raw)
        assert used == len(raw)
        frames.append(frame)
    flags = [fr.split_chunk(f)[0] for f in frames]
    assert flags == [True] * 12 + [False]
    assert fr.iter_chunk_bodies(iter(frames)) == body


def test_empty_body_still_produces_a_terminating_chunk():
    raw_frames = fr.encode_chunked(MsgType.DELTA, b"")
    assert len(raw_frames) == 1
    frame, _ = decode_frame(raw_frames[0])
    assert fr.split_chunk(frame) == (False, b"")


def test_chunk_stream_without_terminator_is_an_error():
    frame, _ = decode_frame(fr.encode_chunked(MsgType.DELTA, b"xy", chunk_bytes=1)[0])
    with pytest.raises(ProtocolError, match="terminator"):
        fr.iter_chunk_bodies(iter([frame]))


# -- file server -----------------------------------------------------------------------


@pytest.fixture()
def run_dir(tmp_path):
    root = tmp_path / "runs"
    root.mkdir()
    for i in range(3):
        run = powder_run(200 + i, 8000 + i, seed=i, n_detectors=8, n_bins=48)
        write_run(root / f"run{200 + i}.trf", run)
    (root / "notes.txt").write_text("not a run")
    (root / "broken.trf").write_bytes(b"JUNKJUNKJUNK")
    return root


def test_list_runs_reports_each_readable_file(run_dir):
    with serve_files(run_dir) as server, DataClient(*server.address) as client:
        entries = client.list_runs()
    assert [e.filename for e in entries] == ["run200.trf", "run201.trf", "run202.trf"]
    assert [e.run_number for e in entries] == [200, 201, 202]
    assert all(e.n_datasets == 3 for e in entries)
    assert all(e.file_size > 0 for e in entries)


def test_run_info_matches_local_probe(run_dir):
    from tofbench.retrievers import probe

    with serve_files(run_dir) as server, DataClient(*server.address) as client:
        assert client.run_info("run201.trf") == probe(run_dir / "run201.trf")


def test_unknown_run_is_not_found(run_dir):
    with serve_files(run_dir) as server, DataClient(*server.address) as client:
        with pytest.raises(RemoteError) as exc:
            client.run_info("missing.trf")
        assert exc.value.code is ErrorCode.NOT_FOUND


def test_path_escapes_are_rejected(run_dir):
    with serve_files(run_dir) as server, DataClient(*server.address) as client:
        for name in ("../run200.trf", "a/b.trf", ".hidden.trf", ""):
            with pytest.raises(RemoteError) as exc:
                client.run_info(name)
            assert exc.value.code is ErrorCode.BAD_REQUEST


def test_full_fetch_equals_local_read(run_dir):
    with serve_files(run_dir) as server:
        remote = client_fetch(server.address, "run200.trf")
    assert remote == read_runfile(run_dir / "run200.trf")


def test_partial_fetch_equals_restricted_local_read(run_dir):
    rng = np.random.default_rng(5)
    with serve_files(run_dir) as server, DataClient(*server.address) as client:
        for _ in range(6):
            sel = LoadSelection(
                dataset_indices=sorted(
                    rng.choice(3, size=rng.integers(1, 4), replace=False).tolist()
                ),
                spectrum_ids=None if rng.random() < 0.3 else [0],
                bin_range=None if rng.random() < 0.5 else (4, 20),
            )
            assert client.fetch("run201.trf", sel) == read_runfile(
                run_dir / "run201.trf", sel
            )


def test_selected_bytes_scale_with_selection(tmp_path):
    root = tmp_path
    n_spectra = 16
    run = flat_run(n_spectra=n_spectra, n_bins=256, seed=3)
    write_run(root / "big.trf", run)
    with serve_files(root) as server:
        with DataClient(*server.address) as client:
            before = client.bytes_received
            client.fetch("big.trf")
            full_bytes = client.bytes_received - before
            before = client.bytes_received
            client.fetch("big.trf", LoadSelection(spectrum_ids=[0]))
            one_bytes = client.bytes_received - before
    assert one_bytes < full_bytes * 2 / n_spectra


def test_sixteen_concurrent_clients_get_their_own_answers(run_dir):
    local = {i: read_runfile(run_dir / f"run{200 + i}.trf") for i in range(3)}

    def fetch_one(k: int) -> bool:
        i = k % 3
        got = client_fetch(server.address, f"run{200 + i}.trf")
        return got == local[i]

    with serve_files(run_dir) as server:
        with ThreadPoolExecutor(max_workers=16) as pool:
            results = list(pool.map(fetch_one, range(16)))
    assert results == [True] * 16


def test_version_mismatch_is_refused_cleanly(run_dir):
    with serve_files(run_dir) as server:
        with socket.create_connection(server.address, timeout=5) as sock:
            sock.sendall(encode_frame(fr.encode_hello(2, "time traveler")))
            buf = b""
            while True:
                chunk = sock.recv(4096)
                if not chunk:
                    break
                buf += chunk
            frame, _ = decode_frame(buf)
            code, message = fr.decode_error(frame)
            assert code is ErrorCode.VERSION_MISMATCH
            assert "version 2" in message
        with DataClient(*server.address) as client:  # server still alive
            assert len(client.list_runs()) == 3


def test_connection_must_open_with_hello(run_dir):
    with serve_files(run_dir) as server:
        with socket.create_connection(server.address, timeout=5) as sock:
            sock.sendall(encode_frame(Frame(MsgType.LIST_RUNS)))
            frame, _ = decode_frame(sock.recv(4096))
            code, _ = fr.decode_error(frame)
            assert code is ErrorCode.BAD_REQUEST


def test_unknown_frame_type_is_reported_and_survivable(run_dir):
    with serve_files(run_dir) as server:
        with socket.create_connection(server.address, timeout=5) as sock:
            sock.sendall(encode_frame(fr.encode_hello(1, "probe")))
            buf = b""
            while True:
                try:
                    _, used = decode_frame(buf)
                    break
                except NeedMoreBytes:
                    buf += sock.recv(4096)
            buf = buf[used:]
            sock.sendall(struct.pack("<IB", 2, 0xEE) + b"??")
            while True:
                try:
                    frame, used = decode_frame(buf)
                    break
                except NeedMoreBytes:
                    buf += sock.recv(4096)
            code, _ = fr.decode_error(frame)
            assert code is ErrorCode.UNKNOWN_TYPE
            # the stream stayed framed: a real request still answers
            buf = buf[used:]
            sock.sendall(encode_frame(Frame(MsgType.LIST_RUNS)))
            while True:
                try:
                    frame, _ = decode_frame(buf)
                    break
                except NeedMoreBytes:
                    buf += sock.recv(4096)
            assert frame.msg_type is MsgType.LIST_RUNS
            assert len(fr.decode_run_list(frame)) == 3


def test_server_survives_abrupt_disconnects(run_dir):
    with serve_files(run_dir) as server:
        for _ in range(4):
            sock = socket.create_connection(server.address, timeout=5)
            sock.sendall(b"\x04\x00")  # half a length field, then vanish
            sock.close()
        with DataClient(*server.address) as client:
            assert len(client.list_runs()) == 3


# -- live simulator ---------------------------------------------------------------------


def test_simulator_sequence_and_counts_are_monotonic():
    sim = LiveSimulator(_flat_dataset(), rate_scale=2.0, seed=1)
    prev_total = 0.0
    for i in range(5):
        sim.tick(0.25)
        status = sim.status()
        assert status.sequence == i + 1
        assert status.total_counts >= prev_total
        prev_total = status.total_counts
    assert sim.status().elapsed_s == pytest.approx(1.25)


def test_simulator_is_deterministic_for_a_seed():
    a = LiveSimulator(_flat_dataset(), seed=42)
    b = LiveSimulator(_flat_dataset(), seed=42)
    a.step(8, 0.1)
    b.step(8, 0.1)
    assert np.array_equal(_grid(a.snapshot()[1]), _grid(b.snapshot()[1]))
    c = LiveSimulator(_flat_dataset(), seed=43)
    c.step(8, 0.1)
    assert not np.array_equal(_grid(a.snapshot()[1]), _grid(c.snapshot()[1]))


def test_simulator_rejects_bad_inputs():
    ds = _flat_dataset()
    with pytest.raises(ValueError, match="at least one spectrum"):
        LiveSimulator(DataSet(title="empty", x_units=XUnits.TOF_US))
    with pytest.raises(ValueError, match="rate scale"):
        LiveSimulator(ds, rate_scale=0.0)
    sim = LiveSimulator(ds)
    with pytest.raises(ValueError, match="tick duration"):
        sim.tick(0.0)


def test_replay_from_any_point_matches_later_snapshot():
    sim = LiveSimulator(_flat_dataset(6, 32), rate_scale=3.0, seed=9)
    snapshots = {}
    for k in range(10):
        snapshots[sim.snapshot()[0]] = _grid(sim.snapshot()[1])
        sim.tick(0.2)
    seq_now, now = sim.snapshot()
    for j, grid_j in snapshots.items():
        delta = sim.delta_since(j)
        assert delta.sequence == seq_now
        replayed = grid_j.copy()
        _apply(replayed, delta)
        assert np.array_equal(replayed, _grid(now))


def test_replay_survives_history_eviction():
    sim = LiveSimulator(_flat_dataset(3, 8), rate_scale=5.0, seed=4)
    sim._history = deque(maxlen=2)  # force the dense fallback path
    base_seq, base = sim.snapshot()
    sim.step(7, 0.3)
    delta = sim.delta_since(base_seq)
    replayed = _grid(base).copy()
    _apply(replayed, delta)
    assert np.array_equal(replayed, _grid(sim.snapshot()[1]))


def test_delta_since_now_is_empty_and_future_is_an_error():
    sim = LiveSimulator(_flat_dataset(), seed=0)
    sim.step(3, 0.1)
    empty = sim.delta_since(3)
    assert len(empty) == 0 and empty.sequence == 3
    with pytest.raises(ValueError, match="current sequence"):
        sim.delta_since(4)


# -- live server --------------------------------------------------------------------------


@pytest.fixture()
def live_server():
    pattern = _flat_dataset(5, 24, seed=13)
    with serve_live(
        pattern, rate_scale=1.5, seed=77, tick_seconds=0.01, start_paused=True
    ) as server:
        yield server


def test_status_controls_the_clock(live_server):
    with DataClient(live_server.host, live_server.port) as client:
        st0 = client.status()
        assert not st0.running and st0.sequence == 0
        st1 = client.step(4)
        assert st1.sequence == 4
        assert st1.elapsed_s == pytest.approx(4 * 0.01)
        assert st1.total_counts >= st0.total_counts
        assert client.resume().running
        assert not client.pause().running


def test_step_cap_is_enforced(live_server):
    with DataClient(live_server.host, live_server.port) as client:
        with pytest.raises(RemoteError) as exc:
            client.step(1_000_000)
        assert exc.value.code is ErrorCode.BAD_REQUEST


def test_snapshot_plus_deltas_equals_later_snapshot(live_server):
    addr = (live_server.host, live_server.port)
    with DataClient(*addr) as control:
        control.step(6)
        seq_j, snap_j = control.snapshot()
        control.step(5)
        seq_k, snap_k = control.snapshot()
        assert seq_j == 6 and seq_k == 11
        with DataClient(*addr) as sub:
            delta = next(sub.subscribe(seq_j))
        assert delta.sequence == seq_k
        grid = _grid(snap_j).copy()
        _apply(grid, delta)
        assert np.array_equal(grid, _grid(snap_k))


def test_subscription_streams_every_tick(live_server):
    addr = (live_server.host, live_server.port)
    with DataClient(*addr) as control:
        control.step(2)
        seq0, snap0 = control.snapshot()
        sub = DataClient(*addr)
        stream = sub.subscribe(seq0)
        catch_up = next(stream)
        assert catch_up.sequence == seq0 and len(catch_up) == 0
        grid = _grid(snap0).copy()
        control.step(3)
        seqs = []
        for _ in range(3):
            delta = next(stream)
            seqs.append(delta.sequence)
            _apply(grid, delta)
        sub.close()
        assert seqs == [3, 4, 5]
        assert np.array_equal(grid, _grid(control.snapshot()[1]))


def test_subscribe_since_the_future_is_malformed(live_server):
    with DataClient(live_server.host, live_server.port) as client:
        with pytest.raises(RemoteError) as exc:
            next(client.subscribe(99))
        assert exc.value.code is ErrorCode.BAD_REQUEST


def test_one_shot_subscribe_generator_cleans_up(live_server):
    addr = (live_server.host, live_server.port)
    stream = client_subscribe(addr, 0)
    first = next(stream)
    assert first.sequence == 0
    stream.close()
    with DataClient(*addr) as client:  # server unaffected
        assert client.status().sequence == 0


def test_live_snapshot_keeps_pattern_structure(live_server):
    with DataClient(live_server.host, live_server.port) as client:
        client.step(1)
        _, snap = client.snapshot()
    pattern = live_server.simulator.pattern
    assert snap.title == pattern.title
    assert snap.x_units == pattern.x_units
    assert [s.id for s in snap.spectra] == [s.id for s in pattern.spectra]
    assert [s.xscale for s in snap.spectra] == [s.xscale for s in pattern.spectra]


def test_live_server_refuses_file_requests(live_server):
    with DataClient(live_server.host, live_server.port) as client:
        with pytest.raises(RemoteError) as exc:
            client.list_runs()
        assert exc.value.code is ErrorCode.BAD_REQUEST


def test_file_server_refuses_live_requests(run_dir):
    with serve_files(run_dir) as server, DataClient(*server.address) as client:
        with pytest.raises(RemoteError) as exc:
            client.status()
        assert exc.value.code is ErrorCode.BAD_REQUEST


def test_live_pattern_from_run_file_skips_monitor(tmp_path):
    run = powder_run(300, 9000, seed=1, n_detectors=8, n_bins=32)
    path = tmp_path / "pattern.trf"
    write_run(path, run)
    with serve_live(path, tick_seconds=5.0, start_paused=True) as server:
        with DataClient(server.host, server.port) as client:
            _, snap = client.snapshot()
    assert snap.title == "detectors"
