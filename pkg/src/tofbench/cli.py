"""Command-line entry point.

Every subcommand is a thin composition of library operations; the only
logic living here is flag parsing, environment fallbacks and exit-code
mapping.  Exit codes are stable for CI: 0 success, 1 usage, 2 bad data,
3 I/O failure, 4 network failure.
"""

from __future__ import annotations

import argparse
import math
import os
import socket
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .colormap import IntensityScale
from .dataserver import ProtocolError, RemoteError, serve_files, serve_live
from .dataset import XUnits, estimate_dataset_size, make_uniform_xscale
from .operators import FocusParams, convert_units, time_focus
from .peaks import (
    GoniometerSetting,
    centroid,
    dataset_to_volume,
    find_peaks,
    index_peaks,
    peak_to_q,
    refine_ub,
    volume_to_dataset,
    write_peaks,
)
from .retrievers import RunFileError, probe, read_run, write_run, write_runfile
from .scripting import execute, parse as parse_script
from .synth import (
    FlatPanel,
    cubic_ub,
    flat_run,
    perturb_reflections,
    powder_run,
    reflection_list,
    scd_volume,
    select_separated,
    well_conditioned_subset,
)
from .views import Viewport, image_raster, write_pgm

__all__ = ["run_cli", "main", "build_parser"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_IO = 3
EXIT_NETWORK = 4


class _UsageError(Exception):
    """Bad flags or flag values; reported with the usage line, exit 1."""


class _NetworkError(Exception):
    """Socket-level failure (bind, connect, protocol); exit 4."""


class _ArgumentParser(argparse.ArgumentParser):
    # argparse wants to sys.exit(2) on its own; route through the usage path
    def error(self, message: str) -> None:
        raise _UsageError(message)


_CONVERT_TARGETS = {
    "d": XUnits.DSPACING_A,
    "q": XUnits.Q_INV_A,
    "wavelength": XUnits.WAVELENGTH_A,
}


def _env_port() -> Optional[int]:
    raw = os.environ.get("TOFBENCH_PORT")
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        raise _UsageError(f"TOFBENCH_PORT must be an integer, got {raw!r}") from None


def _parse_hostport(text: str) -> tuple:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise _UsageError(f"expected HOST:PORT, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise _UsageError(f"port in {text!r} is not an integer") from None


def _parse_focus(text: str) -> FocusParams:
    parts = text.split(",")
    if len(parts) != 3:
        raise _UsageError(f"--focus needs THETA_DEG,L1_M,L2_M, got {text!r}")
    try:
        theta_deg, l1_m, l2_m = (float(p) for p in parts)
    except ValueError:
        raise _UsageError(f"--focus values must be numbers, got {text!r}") from None
    try:
        return FocusParams(
            ref_theta_rad=math.radians(theta_deg), ref_l2_m=l2_m, ref_l1_m=l1_m
        )
    except ValueError as exc:
        raise _UsageError(f"--focus: {exc}") from None


def _pick_dataset(run, index: int):
    if not 0 <= index < len(run.datasets):
        raise ValueError(
            f"dataset index {index} out of range (run has {len(run.datasets)})"
        )
    return run.datasets[index]


def _input_file(path) -> str:
    # a missing input is an I/O failure (exit 3); the retriever's own
    # wrapping would otherwise fold it into the bad-data exit
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return str(path)


def _free_port(host: str) -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def _wait_for_interrupt() -> None:
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass


# ------------------------------------------------------------- subcommands


def _cmd_info(args) -> int:
    directory = probe(_input_file(args.file))
    print(
        f"{args.file}: instrument {directory.instrument},"
        f" run {directory.run_number}, start_time {directory.start_time}"
    )
    print(f"{directory.n_datasets} datasets:")
    for i, e in enumerate(directory.entries):
        est = estimate_dataset_size(e.n_spectra, e.n_bins)
        print(
            f"  [{i}] {e.name}: {e.kind.name.lower()},"
            f" {e.n_spectra} spectra x {e.n_bins} bins,"
            f" {e.length} bytes on disk, {est} bytes of histograms"
        )
    return EXIT_OK


def _cmd_convert(args) -> int:
    target = _CONVERT_TARGETS[args.to]
    fp = _parse_focus(args.focus) if args.focus else None
    run = read_run(_input_file(args.file))
    picked = (
        [_pick_dataset(run, args.ds)] if args.ds is not None else list(run.datasets)
    )
    converted = []
    for ds in picked:
        if fp is not None:
            ds = time_focus(ds, fp)
        converted.append(convert_units(ds, target))
    write_runfile(
        args.output, run.instrument, run.run_number, run.start_time, converted
    )
    print(f"wrote {len(converted)} dataset(s) in {target.value} to {args.output}")
    return EXIT_OK


def _cmd_reduce(args) -> int:
    text = Path(args.script).read_text(encoding="utf-8")
    execute(parse_script(text), output=sys.stdout)
    return EXIT_OK


def _read_assignments(path) -> list:
    assigned = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 6:
            raise ValueError(
                f"{path}:{lineno}: expected 'h k l qx qy qz', got {len(parts)} fields"
            )
        try:
            hkl = tuple(int(p) for p in parts[:3])
            q = tuple(float(p) for p in parts[3:])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric assignment {body!r}") from None
        assigned.append((hkl, q))
    if not assigned:
        raise ValueError(f"{path}: no assignments found")
    return assigned


def _cmd_peaks(args) -> int:
    if not args.find:
        raise _UsageError("peaks requires --find (searching starts the pipeline)")
    if args.index and not args.ub_from:
        raise _UsageError("--index needs --ub-from to establish an orientation")
    run = read_run(_input_file(args.file))
    vol = dataset_to_volume(_pick_dataset(run, args.ds))
    found = find_peaks(
        vol, k_sigma=args.threshold, max_peaks=args.max_peaks, min_sep=args.min_sep
    )
    peaks = [peak_to_q(centroid(vol, p), vol) for p in found]
    print(f"found {len(peaks)} peaks in dataset {args.ds} of {args.file}")
    if args.ub_from:
        assigned = _read_assignments(args.ub_from)
        ub, rms = refine_ub(assigned)
        print(f"UB from {len(assigned)} assignments, rms residual {rms:.3e} 1/A:")
        for row in ub.m:
            print(f"  {row[0]: .8f} {row[1]: .8f} {row[2]: .8f}")
        if args.index:
            peaks = index_peaks(ub, peaks, tol=args.tol)
            n_indexed = sum(1 for p in peaks if p.hkl is not None)
            print(f"indexed {n_indexed} of {len(peaks)} peaks (tol {args.tol:g})")
    write_peaks(peaks, args.output)
    print(f"wrote {len(peaks)} peaks to {args.output}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    root = args.root or os.environ.get("TOFBENCH_ROOT") or "."
    if not Path(root).is_dir():
        raise _UsageError(f"serve root {root!r} is not a directory")
    port = args.port if args.port is not None else (_env_port() or 0)
    live_addr = _parse_hostport(args.live) if args.live else None
    try:
        server = serve_files(root, port=port, host=args.host)
    except OSError as exc:
        raise _NetworkError(f"cannot bind {args.host}:{port}: {exc}") from None
    try:
        print(
            f"file server listening on {server.host}:{server.port} (root {root})",
            flush=True,
        )
        if args.ui:
            # the HTTP stack loads only when asked for
            import uvicorn

            from .webapi import create_app

            frontend = Path(args.frontend)
            app = create_app(
                root,
                live_addr=live_addr,
                frontend_dir=frontend if frontend.is_dir() else None,
            )
            http_port = args.http_port or _free_port(args.host)
            print(f"http api listening on {args.host}:{http_port}", flush=True)
            uvicorn.run(app, host=args.host, port=http_port, log_level="warning")
        else:
            _wait_for_interrupt()
    finally:
        server.close()
    return EXIT_OK


def _cmd_live(args) -> int:
    if args.tick <= 0:
        raise _UsageError(f"--tick must be > 0, got {args.tick}")
    if args.rate <= 0:
        raise _UsageError(f"--rate must be > 0, got {args.rate}")
    port = args.port if args.port is not None else (_env_port() or 0)
    try:
        server = serve_live(
            _input_file(args.pattern),
            rate_scale=args.rate,
            port=port,
            host=args.host,
            seed=args.seed,
            tick_seconds=args.tick,
            start_paused=args.paused,
        )
    except OSError as exc:
        if isinstance(exc, (FileNotFoundError, PermissionError)):
            raise
        raise _NetworkError(f"cannot bind {args.host}:{port}: {exc}") from None
    try:
        state = "paused" if args.paused else "ticking"
        print(
            f"live server listening on {server.host}:{server.port}"
            f" ({state}, tick {args.tick:g} s, seed {args.seed})",
            flush=True,
        )
        _wait_for_interrupt()
    finally:
        server.close()
    return EXIT_OK


def _cmd_raster(args) -> int:
    if args.width < 1 or args.height < 1:
        raise _UsageError("raster dimensions must be at least 1x1")
    if args.row_offset < 0 or args.col_offset < 0:
        raise _UsageError("raster offsets must be >= 0")
    run = read_run(_input_file(args.file))
    ds = _pick_dataset(run, args.ds)
    vp = Viewport(
        width_px=args.width,
        height_px=args.height,
        row_offset=args.row_offset,
        col_offset=args.col_offset,
        horizontal_compression=not args.no_compress,
        intensity_scale=IntensityScale.LOG if args.log else IntensityScale.LINEAR,
    )
    rr = image_raster(ds, vp, aggregation="mean" if args.mean else "max")
    write_pgm(rr.pixels, args.output)
    print(
        f"wrote {args.width}x{args.height} PGM to {args.output}"
        f" (values {rr.value_range[0]:g} to {rr.value_range[1]:g})"
    )
    return EXIT_OK


def _cmd_gen_powder(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.runs):
        number = args.first_run + i
        run = powder_run(
            number,
            args.start_time + 360 * i,
            seed=args.seed + i,
            n_detectors=args.detectors,
            n_bins=args.bins,
        )
        write_run(out / f"run{number}.trf", run)
    print(
        f"wrote {args.runs} powder run(s) to {out}"
        f" ({args.detectors} detectors x {args.bins} bins each)"
    )
    return EXIT_OK


def _cmd_gen_scd(args) -> int:
    panel = FlatPanel(
        n_rows=args.rows,
        n_cols=args.cols,
        pitch_m=0.003,
        distance_m=0.22,
        two_theta_deg=85.0,
        l1_m=9.0,
    )
    tof = make_uniform_xscale(400.0, 20400.0, args.channels)
    ub = cubic_ub(args.lattice)
    gonio = GoniometerSetting(0.0, 0.0, 0.0)
    pool = reflection_list(ub, gonio, panel, tof, hmax=8, margin=4.0)
    rng = np.random.default_rng(args.seed)
    chosen = select_separated(pool, args.reflections, 6.0, rng)
    if args.noise > 0:
        chosen = perturb_reflections(chosen, args.noise, rng, panel, tof, margin=2.0)
    amplitudes = rng.uniform(500.0, 3000.0, size=len(chosen))
    vol = scd_volume(
        panel, tof, chosen, amplitudes=amplitudes, sigma_vox=0.8,
        background=0.4, rng=rng,
    )
    out = Path(args.out)
    write_runfile(out, "synth-scd", 1, 0, [volume_to_dataset(vol, title="volume")])

    # ground truth beside the volume: the generating UB and five
    # well-spread (hkl, q) assignments ready for `peaks --ub-from`
    ub_path = out.with_name(out.stem + ".ub.txt")
    np.savetxt(ub_path, ub.m, fmt="%.12g")
    assign_path = out.with_name(out.stem + ".assign.txt")
    subset = well_conditioned_subset([r.hkl for r in chosen], n=5)
    with open(assign_path, "w", encoding="utf-8") as f:
        f.write("# h k l qx qy qz\n")
        for i in subset:
            r = chosen[i]
            f.write(
                f"{r.hkl[0]} {r.hkl[1]} {r.hkl[2]}"
                f" {r.q_lab[0]:.10f} {r.q_lab[1]:.10f} {r.q_lab[2]:.10f}\n"
            )
    print(
        f"wrote {args.rows}x{args.cols}x{args.channels} volume with"
        f" {len(chosen)} reflections to {out}"
    )
    print(f"wrote truth UB to {ub_path} and assignments to {assign_path}")
    return EXIT_OK


def _cmd_gen_flat(args) -> int:
    run = flat_run(args.spectra, args.bins, seed=args.seed, run_number=args.run_number)
    write_run(args.out, run)
    print(f"wrote {args.spectra} x {args.bins} flat run to {args.out}")
    return EXIT_OK


def _cmd_gen_pattern(args) -> int:
    # detectors come in banks of four angles, so round the request up
    n = max(4, -(-args.spectra // 4) * 4)
    run = powder_run(1, 0, seed=args.seed, n_detectors=n, n_bins=args.bins)
    write_runfile(args.out, "synth-pattern", 1, 0, [run.datasets[1]])
    print(f"wrote {n}-spectrum live rate pattern to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="tofbench",
        description="Workbench for time-of-flight neutron scattering data.",
    )
    parser.add_argument(
        "--version", action="version", version=f"tofbench {__version__}"
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("info", help="print a run file's directory and size report")
    p.add_argument("file")
    p.set_defaults(func=_cmd_info)

    p = sub.add_parser(
        "convert", help="convert x-axis units, optionally time-focusing first"
    )
    p.add_argument("file")
    p.add_argument(
        "--to",
        required=True,
        choices=sorted(_CONVERT_TARGETS),
        help="target units: d-spacing, momentum transfer, or wavelength",
    )
    p.add_argument(
        "--ds", type=int, default=None, help="dataset index (default: every dataset)"
    )
    p.add_argument(
        "--focus",
        metavar="THETA_DEG,L1_M,L2_M",
        help="focus each bank onto this reference geometry before converting",
    )
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("reduce", help="run a batch reduction script")
    p.add_argument("--script", required=True, help="script file to execute")
    p.set_defaults(func=_cmd_reduce)

    p = sub.add_parser("peaks", help="single-crystal peak search, UB, indexing")
    p.add_argument("file")
    p.add_argument("--ds", type=int, default=0, help="dataset index of the volume")
    p.add_argument("--find", action="store_true", help="search the volume for peaks")
    p.add_argument(
        "--index", action="store_true", help="assign hkl via the refined UB"
    )
    p.add_argument(
        "--ub-from",
        metavar="ASSIGN_TXT",
        help="refine UB from 'h k l qx qy qz' lines in this file",
    )
    p.add_argument(
        "--threshold",
        type=float,
        default=5.0,
        help="detection threshold in sigmas above the volume mean",
    )
    p.add_argument("--max-peaks", type=int, default=100)
    p.add_argument(
        "--min-sep", type=int, default=4, help="minimum voxel separation of peaks"
    )
    p.add_argument(
        "--tol", type=float, default=0.10, help="max distance from integer hkl"
    )
    p.add_argument("-o", "--output", default="peaks.txt")
    p.set_defaults(func=_cmd_peaks)

    p = sub.add_parser(
        "serve", help="publish a directory of run files (TCP; HTTP too with --ui)"
    )
    p.add_argument(
        "--root", default=None, help="directory of .trf files ($TOFBENCH_ROOT or .)"
    )
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument(
        "--port",
        type=int,
        default=None,
        help="TCP port ($TOFBENCH_PORT, or an ephemeral one)",
    )
    p.add_argument(
        "--ui",
        action="store_true",
        help="also serve the HTTP/JSON API and, when built, the web UI",
    )
    p.add_argument(
        "--http-port",
        type=int,
        default=8080,
        help="HTTP port with --ui; 0 picks a free one",
    )
    p.add_argument(
        "--frontend",
        default="frontend/dist",
        metavar="DIR",
        help="built UI files, mounted at / when the directory exists",
    )
    p.add_argument(
        "--live",
        metavar="HOST:PORT",
        help="live server the HTTP API forwards deltas from",
    )
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("live", help="run the simulated live acquisition server")
    p.add_argument(
        "--pattern",
        required=True,
        help="run file whose first detector dataset shapes the count rates",
    )
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument(
        "--port", type=int, default=None, help="TCP port ($TOFBENCH_PORT or ephemeral)"
    )
    p.add_argument(
        "--rate", type=float, default=1.0, help="rate scale, counts/s per unit pattern"
    )
    p.add_argument(
        "--tick", type=float, default=0.5, help="seconds between accumulation ticks"
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--paused", action="store_true", help="start with the clock stopped"
    )
    p.set_defaults(func=_cmd_live)

    p = sub.add_parser("raster", help="render a dataset image to binary PGM")
    p.add_argument("file")
    p.add_argument("--ds", type=int, default=0, help="dataset index")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--row-offset", type=int, default=0)
    p.add_argument("--col-offset", type=int, default=0)
    p.add_argument(
        "--no-compress",
        action="store_true",
        help="window the columns instead of compressing bins to fit",
    )
    p.add_argument("--log", action="store_true", help="logarithmic intensity scale")
    p.add_argument(
        "--mean",
        action="store_true",
        help="average covered bins per column instead of taking their max",
    )
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_raster)

    p = sub.add_parser("gen", help="generate synthetic fixtures")
    gen_sub = p.add_subparsers(dest="kind", metavar="KIND", required=True)

    g = gen_sub.add_parser(
        "powder", help="powder runs: monitor + detectors + per-bank sums"
    )
    g.add_argument("--out", required=True, help="directory for runNNNN.trf files")
    g.add_argument("--runs", type=int, default=1)
    g.add_argument("--detectors", type=int, default=160)
    g.add_argument("--bins", type=int, default=5000)
    g.add_argument("--first-run", type=int, default=1000)
    g.add_argument(
        "--start-time",
        type=int,
        default=700000,
        help="start_time of the first run; later runs step by 360 s",
    )
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_powder)

    g = gen_sub.add_parser(
        "scd", help="single-crystal volume with known UB, plus truth files"
    )
    g.add_argument("--out", required=True, help="output run file (.trf)")
    g.add_argument("--rows", type=int, default=64)
    g.add_argument("--cols", type=int, default=64)
    g.add_argument("--channels", type=int, default=160)
    g.add_argument("--reflections", type=int, default=12)
    g.add_argument(
        "--lattice", type=float, default=4.0, help="cubic lattice edge in Angstrom"
    )
    g.add_argument(
        "--noise", type=float, default=0.0, help="q perturbation sigma in 1/Angstrom"
    )
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_scd)

    g = gen_sub.add_parser("flat", help="one large flat dataset for stress tests")
    g.add_argument("--out", required=True, help="output run file (.trf)")
    g.add_argument("--spectra", type=int, default=1000)
    g.add_argument("--bins", type=int, default=1000)
    g.add_argument("--run-number", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_flat)

    g = gen_sub.add_parser(
        "pattern", help="small single-dataset rate pattern for the live server"
    )
    g.add_argument("--out", required=True, help="output run file (.trf)")
    g.add_argument(
        "--spectra", type=int, default=16, help="detector count, rounded up to 4s"
    )
    g.add_argument("--bins", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_pattern)

    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"tofbench: error: {exc}", file=sys.stderr)
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version print and leave
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"tofbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (_NetworkError, RemoteError, ProtocolError, ConnectionError, TimeoutError) as exc:
        print(f"tofbench: network error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except (RunFileError, ValueError, KeyError) as exc:
        print(f"tofbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"tofbench: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
