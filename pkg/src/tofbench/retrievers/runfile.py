"""Native binary run-file format with seek-based partial loading.

Layout (all little-endian, strings = u16 byte length + UTF-8):

    magic "TRF1" | u32 format_version=1 | string instrument | u32 run_number
    | i64 start_time | u32 n_datasets
    | directory entries [string name, u8 kind, u32 n_spectra, u32 n_bins,
                         u64 offset, u64 length]
    | zero padding to 8-byte alignment | dataset blocks

Dataset block:

    u8 x_units code (0=tof_us, 1=wavelength_A, 2=dspacing_A, 3=Q_invA)
    | u8 shared_scale flag | shared x-scale record (only when flag = 1)
    | per spectrum: u32 id, u32 group_id, string label,
      u8 has_geometry, geometry 6xf64 (only when has_geometry = 1:
      pos x, y, z, L1, solid_angle, efficiency), u16 n_attrs,
      attrs [string name, u8 tag (0=f64, 1=i64, 2=string, 3=f64 triple),
      payload], own x-scale record (only when shared_scale = 0),
      n_bins x f32 counts, n_bins x f32 errors

X-scale record: u8 kind; uniform (0): f64 start, f64 end, u32 nbins;
explicit (1): u32 n_edges, n_edges x f64.

Every spectrum payload is independently seekable from the directory, which
is what partial loading requires.  Directory offsets are absolute file
offsets, strictly increasing and non-overlapping.

Readers are reentrant (stateless per call); writers need exclusive access
to the target path, which is the caller's responsibility.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO, Optional, Sequence

import numpy as np

from ..dataset import (
    Attribute,
    DataSet,
    DetectorGeometry,
    ExplicitXScale,
    Spectrum,
    UniformXScale,
    XScale,
    XUnits,
)
from .records import ByteReader, ByteWriter, ShortBuffer

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "RunFileError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedError",
    "SelectionError",
    "DatasetKind",
    "DirectoryEntry",
    "RunFileDirectory",
    "LoadSelection",
    "Run",
    "probe",
    "read_runfile",
    "read_run",
    "write_runfile",
    "write_run",
    "encode_xscale",
    "decode_xscale",
    "encode_spectrum",
    "decode_spectrum",
    "encode_dataset_block",
    "decode_dataset_block",
]

MAGIC = b"TRF1"
FORMAT_VERSION = 1

X_UNITS_CODE = {
    XUnits.TOF_US: 0,
    XUnits.WAVELENGTH_A: 1,
    XUnits.DSPACING_A: 2,
    XUnits.Q_INV_A: 3,
}
X_UNITS_FROM_CODE = {v: k for k, v in X_UNITS_CODE.items()}


class RunFileError(Exception):
    """Base error for run-file parsing and writing."""


class BadMagicError(RunFileError):
    pass


class UnsupportedVersionError(RunFileError):
    pass


class TruncatedError(RunFileError):
    """File ended inside a record; `offset` is the byte where data ran out."""

    def __init__(self, offset: int, detail: str = ""):
        msg = f"file truncated at byte {offset}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.offset = offset


class SelectionError(RunFileError):
    """A load selection referenced something the file does not contain."""


class DatasetKind(IntEnum):
    MONITOR = 0
    HISTOGRAM = 1
    PULSE_HEIGHT = 2


@dataclass(frozen=True)
class DirectoryEntry:
    name: str
    kind: DatasetKind
    n_spectra: int
    n_bins: int
    offset: int
    length: int


@dataclass(frozen=True)
class RunFileDirectory:
    instrument: str
    run_number: int
    start_time: int
    entries: tuple

    @property
    def n_datasets(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class LoadSelection:
    """What to load: dataset indices, spectrum ids, and a half-open bin range.

    None means "everything" for that axis.  spectrum_ids select within every
    chosen dataset; an id found in none of them is an error.
    """

    dataset_indices: Optional[Sequence[int]] = None
    spectrum_ids: Optional[Sequence[int]] = None
    bin_range: Optional[tuple] = None


@dataclass(frozen=True)
class Run:
    """One measurement: identity plus its datasets."""

    instrument: str
    run_number: int
    start_time: int
    datasets: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "datasets", tuple(self.datasets))


# -- record codecs (shared with the network protocol) --------------------------


def encode_xscale(w: ByteWriter, xs: XScale) -> None:
    if isinstance(xs, UniformXScale):
        w.u8(0)
        w.f64(xs.start)
        w.f64(xs.end)
        w.u32(xs.nbins)
    else:
        w.u8(1)
        w.u32(xs.edges.size)
        w.f64_array(xs.edges)


def decode_xscale(r: ByteReader) -> XScale:
    kind = r.u8()
    if kind == 0:
        start = r.f64()
        end = r.f64()
        nbins = r.u32()
        return UniformXScale(start, end, nbins)
    if kind == 1:
        n = r.u32()
        return ExplicitXScale(r.f64_array(n))
    raise RunFileError(f"unknown x-scale kind {kind}")


_ATTR_TAG_F64 = 0
_ATTR_TAG_I64 = 1
_ATTR_TAG_STRING = 2
_ATTR_TAG_TRIPLE = 3


def _encode_attr(w: ByteWriter, attr: Attribute) -> None:
    w.string(attr.name)
    v = attr.value
    if isinstance(v, float):
        w.u8(_ATTR_TAG_F64)
        w.f64(v)
    elif isinstance(v, int):
        w.u8(_ATTR_TAG_I64)
        w.i64(v)
    elif isinstance(v, str):
        w.u8(_ATTR_TAG_STRING)
        w.string(v)
    else:
        w.u8(_ATTR_TAG_TRIPLE)
        for x in v:
            w.f64(x)


def _decode_attr(r: ByteReader) -> Attribute:
    name = r.string()
    tag = r.u8()
    if tag == _ATTR_TAG_F64:
        return Attribute(name, r.f64())
    if tag == _ATTR_TAG_I64:
        return Attribute(name, r.i64())
    if tag == _ATTR_TAG_STRING:
        return Attribute(name, r.string())
    if tag == _ATTR_TAG_TRIPLE:
        return Attribute(name, (r.f64(), r.f64(), r.f64()))
    raise RunFileError(f"unknown attribute tag {tag} for {name!r}")


def encode_spectrum(w: ByteWriter, s: Spectrum, *, with_xscale: bool) -> None:
    w.u32(s.id)
    w.u32(s.group_id)
    w.string(s.label)
    if s.geometry is None:
        w.u8(0)
    else:
        w.u8(1)
        g = s.geometry
        for v in (*g.position, g.l1_m, g.solid_angle_sr, g.efficiency):
            w.f64(v)
    w.u16(len(s.attributes))
    for attr in s.attributes:
        _encode_attr(w, attr)
    if with_xscale:
        encode_xscale(w, s.xscale)
    w.f32_array(s.counts)
    w.f32_array(s.errors)


def decode_spectrum(
    r: ByteReader, n_bins: int, shared_xscale: Optional[XScale]
) -> Spectrum:
    sid = r.u32()
    group_id = r.u32()
    label = r.string()
    geometry = None
    if r.u8():
        vals = [r.f64() for _ in range(6)]
        geometry = DetectorGeometry(
            position=(vals[0], vals[1], vals[2]),
            l1_m=vals[3],
            solid_angle_sr=vals[4],
            efficiency=vals[5],
        )
    n_attrs = r.u16()
    attrs = tuple(_decode_attr(r) for _ in range(n_attrs))
    xscale = shared_xscale if shared_xscale is not None else decode_xscale(r)
    counts = r.f32_array(n_bins)
    errors = r.f32_array(n_bins)
    return Spectrum(
        id=sid,
        xscale=xscale,
        counts=counts,
        errors=errors,
        group_id=group_id,
        label=label,
        geometry=geometry,
        attributes=attrs,
    )


def _dataset_n_bins(ds: DataSet) -> int:
    if not ds.spectra:
        return 0
    nbins = ds.spectra[0].nbins
    for s in ds.spectra:
        if s.nbins != nbins:
            raise RunFileError(
                f"dataset {ds.title!r} has mixed bin counts"
                f" ({nbins} vs {s.nbins} on spectrum {s.id}); not representable"
            )
    return nbins


def _dataset_kind(ds: DataSet) -> DatasetKind:
    if ds.spectra and all(s.attr("monitor") == 1 for s in ds.spectra):
        return DatasetKind.MONITOR
    return DatasetKind.HISTOGRAM


def encode_dataset_block(ds: DataSet) -> bytes:
    w = ByteWriter()
    w.u8(X_UNITS_CODE[ds.x_units])
    if ds.spectra:
        first = ds.spectra[0].xscale
        shared = all(s.xscale == first for s in ds.spectra)
    else:
        first = UniformXScale(0.0, 1.0, 1)
        shared = True
    w.u8(1 if shared else 0)
    if shared:
        encode_xscale(w, first)
    for s in ds.spectra:
        encode_spectrum(w, s, with_xscale=not shared)
    return w.getvalue()


def decode_dataset_block(
    buf: bytes, entry_name: str, n_spectra: int, n_bins: int, base_offset: int = 0
) -> DataSet:
    r = ByteReader(buf, base_offset=base_offset)
    units = r.u8()
    if units not in X_UNITS_FROM_CODE:
        raise RunFileError(f"unknown x-units code {units} in dataset {entry_name!r}")
    shared = r.u8()
    shared_xscale = decode_xscale(r) if shared else None
    if shared_xscale is not None and n_spectra > 0 and shared_xscale.nbins != n_bins:
        raise RunFileError(
            f"dataset {entry_name!r}: x-scale has {shared_xscale.nbins} bins"
            f" but directory says {n_bins}"
        )
    spectra = tuple(
        decode_spectrum(r, n_bins, shared_xscale) for _ in range(n_spectra)
    )
    return DataSet(title=entry_name, x_units=X_UNITS_FROM_CODE[units], spectra=spectra)


# -- file-level reader/writer ---------------------------------------------------


class _FileReader:
    """Minimal record reader over a file object; offsets are absolute."""

    def __init__(self, f: BinaryIO):
        self.f = f

    def read_exact(self, n: int, what: str = "") -> bytes:
        b = self.f.read(n)
        if len(b) < n:
            raise TruncatedError(self.f.tell(), what)
        return b

    def u8(self) -> int:
        return self.read_exact(1, "u8")[0]

    def u16(self) -> int:
        return int.from_bytes(self.read_exact(2, "u16"), "little")

    def u32(self) -> int:
        return int.from_bytes(self.read_exact(4, "u32"), "little")

    def u64(self) -> int:
        return int.from_bytes(self.read_exact(8, "u64"), "little")

    def i64(self) -> int:
        return int.from_bytes(self.read_exact(8, "i64"), "little", signed=True)

    def f64(self) -> float:
        return np.frombuffer(self.read_exact(8, "f64"), "<f8")[0].item()

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.read_exact(8 * count, "f64 array"), "<f8")

    def f32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.read_exact(4 * count, "f32 array"), "<f4")

    def string(self) -> str:
        n = self.u16()
        return self.read_exact(n, "string").decode("utf-8")


def _open_for_read(source):
    """Accept a path or a file-like object (read/seek/tell)."""
    if hasattr(source, "read"):
        return source, False
    try:
        return open(source, "rb"), True
    except OSError as e:
        raise RunFileError(f"cannot open run file {source}: {e}") from e


def probe(source) -> RunFileDirectory:
    """Parse the header and directory only; no spectrum payload is read."""
    f, owned = _open_for_read(source)
    try:
        f.seek(0)
        r = _FileReader(f)
        magic = r.read_exact(4, "magic")
        if magic != MAGIC:
            raise BadMagicError(f"not a run file: magic {magic!r}")
        version = r.u32()
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"format version {version} not supported (reader handles {FORMAT_VERSION})"
            )
        instrument = r.string()
        run_number = r.u32()
        start_time = r.i64()
        n_datasets = r.u32()
        entries = []
        for i in range(n_datasets):
            name = r.string()
            kind = r.u8()
            if kind not in (0, 1, 2):
                raise RunFileError(f"directory entry {i}: unknown dataset kind {kind}")
            n_spectra = r.u32()
            n_bins = r.u32()
            offset = r.u64()
            length = r.u64()
            entries.append(
                DirectoryEntry(name, DatasetKind(kind), n_spectra, n_bins, offset, length)
            )
        header_end = f.tell()
        header_end += (-header_end) % 8
        file_size = f.seek(0, os.SEEK_END)
        prev_end = header_end
        for i, e in enumerate(entries):
            if e.offset < prev_end:
                raise RunFileError(
                    f"directory entry {i} ({e.name!r}) overlaps previous data"
                    f" (offset {e.offset} < {prev_end})"
                )
            if e.offset + e.length > file_size:
                raise TruncatedError(
                    file_size, f"directory entry {i} ({e.name!r}) extends past end of file"
                )
            prev_end = e.offset + e.length
        return RunFileDirectory(instrument, run_number, start_time, tuple(entries))
    finally:
        if owned:
            f.close()


def _slice_xscale(xs: XScale, lo: int, hi: int) -> XScale:
    if isinstance(xs, UniformXScale):
        return UniformXScale(xs.coordinate(lo), xs.coordinate(hi), hi - lo)
    return ExplicitXScale(xs.edges[lo : hi + 1])


def _read_block_selective(
    f: BinaryIO,
    entry: DirectoryEntry,
    wanted_ids: Optional[set],
    bin_range: Optional[tuple],
    found_ids: set,
) -> DataSet:
    """Walk spectrum headers, seeking over payloads that are not selected."""
    f.seek(entry.offset)
    r = _FileReader(f)
    units = r.u8()
    if units not in X_UNITS_FROM_CODE:
        raise RunFileError(f"unknown x-units code {units} in dataset {entry.name!r}")
    shared = r.u8()
    shared_xscale = None
    if shared:
        kind = r.u8()
        if kind == 0:
            shared_xscale = UniformXScale(r.f64(), r.f64(), r.u32())
        elif kind == 1:
            shared_xscale = ExplicitXScale(r.f64_array(r.u32()))
        else:
            raise RunFileError(f"unknown x-scale kind {kind}")

    n_bins = entry.n_bins
    lo, hi = (0, n_bins) if bin_range is None else bin_range
    spectra = []
    for _ in range(entry.n_spectra):
        sid = r.u32()
        group_id = r.u32()
        label = r.string()
        geometry = None
        if r.u8():
            vals = r.f64_array(6)
            geometry = DetectorGeometry(
                position=(vals[0], vals[1], vals[2]),
                l1_m=float(vals[3]),
                solid_angle_sr=float(vals[4]),
                efficiency=float(vals[5]),
            )
        n_attrs = r.u16()
        attrs = []
        for _ in range(n_attrs):
            name = r.string()
            tag = r.u8()
            if tag == _ATTR_TAG_F64:
                attrs.append(Attribute(name, r.f64()))
            elif tag == _ATTR_TAG_I64:
                attrs.append(Attribute(name, r.i64()))
            elif tag == _ATTR_TAG_STRING:
                attrs.append(Attribute(name, r.string()))
            elif tag == _ATTR_TAG_TRIPLE:
                attrs.append(Attribute(name, (r.f64(), r.f64(), r.f64())))
            else:
                raise RunFileError(f"unknown attribute tag {tag} for {name!r}")
        own_xscale = None
        if not shared:
            kind = r.u8()
            if kind == 0:
                own_xscale = UniformXScale(r.f64(), r.f64(), r.u32())
            elif kind == 1:
                own_xscale = ExplicitXScale(r.f64_array(r.u32()))
            else:
                raise RunFileError(f"unknown x-scale kind {kind}")

        payload_start = f.tell()
        selected = wanted_ids is None or sid in wanted_ids
        if not selected:
            f.seek(payload_start + 8 * n_bins)
            continue
        found_ids.add(sid)
        if lo > 0 or hi < n_bins:
            f.seek(payload_start + 4 * lo)
            counts = r.f32_array(hi - lo)
            f.seek(payload_start + 4 * n_bins + 4 * lo)
            errors = r.f32_array(hi - lo)
            f.seek(payload_start + 8 * n_bins)
            xscale = _slice_xscale(shared_xscale or own_xscale, lo, hi)
        else:
            counts = r.f32_array(n_bins)
            errors = r.f32_array(n_bins)
            xscale = shared_xscale or own_xscale
        spectra.append(
            Spectrum(
                id=sid,
                xscale=xscale,
                counts=counts,
                errors=errors,
                group_id=group_id,
                label=label,
                geometry=geometry,
                attributes=tuple(attrs),
            )
        )
    return DataSet(
        title=entry.name, x_units=X_UNITS_FROM_CODE[units], spectra=tuple(spectra)
    )


def read_runfile(source, sel: Optional[LoadSelection] = None):
    """Load datasets from a run file, honoring the selection.

    Payload bytes read are limited to the selected blocks: whole unselected
    datasets are never touched, unselected spectra inside a selected dataset
    are seeked over, and a bin range reads only the covered slice of each
    counts/errors array.
    """
    f, owned = _open_for_read(source)
    try:
        directory = probe(f)
        n = directory.n_datasets
        if sel is None:
            sel = LoadSelection()
        if sel.dataset_indices is None:
            indices = list(range(n))
        else:
            indices = list(sel.dataset_indices)
            for i in indices:
                if not 0 <= i < n:
                    raise SelectionError(
                        f"dataset index {i} out of range (file has {n} datasets)"
                    )
        bin_range = None
        if sel.bin_range is not None:
            lo, hi = sel.bin_range
            if not 0 <= lo < hi:
                raise SelectionError(f"bin range ({lo}, {hi}) is not a valid half-open range")
            for i in indices:
                e = directory.entries[i]
                if e.n_spectra > 0 and hi > e.n_bins:
                    raise SelectionError(
                        f"bin range ({lo}, {hi}) exceeds dataset {i} ({e.name!r})"
                        f" with {e.n_bins} bins"
                    )
            bin_range = (lo, hi)
        wanted_ids = None if sel.spectrum_ids is None else set(sel.spectrum_ids)

        out = []
        found_ids: set = set()
        for i in indices:
            entry = directory.entries[i]
            if wanted_ids is None and bin_range is None:
                f.seek(entry.offset)
                block = f.read(entry.length)
                if len(block) < entry.length:
                    raise TruncatedError(entry.offset + len(block), f"dataset {entry.name!r}")
                try:
                    out.append(
                        decode_dataset_block(
                            block, entry.name, entry.n_spectra, entry.n_bins, entry.offset
                        )
                    )
                except ShortBuffer as sb:
                    raise TruncatedError(sb.offset, f"dataset {entry.name!r}") from sb
            else:
                out.append(
                    _read_block_selective(f, entry, wanted_ids, bin_range, found_ids)
                )
        if wanted_ids is not None:
            missing = sorted(wanted_ids - found_ids)
            if missing:
                raise SelectionError(
                    f"spectrum ids {missing} not present in the selected datasets"
                )
        return out
    finally:
        if owned:
            f.close()


def read_run(source) -> Run:
    """Load the whole file as a Run (identity fields plus all datasets)."""
    f, owned = _open_for_read(source)
    try:
        directory = probe(f)
        datasets = read_runfile(f)
        return Run(
            instrument=directory.instrument,
            run_number=directory.run_number,
            start_time=directory.start_time,
            datasets=tuple(datasets),
        )
    finally:
        if owned:
            f.close()


def _serialize_header(
    instrument: str, run_number: int, start_time: int, entries: Sequence[DirectoryEntry]
) -> bytes:
    w = ByteWriter()
    w.raw(MAGIC)
    w.u32(FORMAT_VERSION)
    w.string(instrument)
    w.u32(run_number)
    w.i64(start_time)
    w.u32(len(entries))
    for e in entries:
        w.string(e.name)
        w.u8(int(e.kind))
        w.u32(e.n_spectra)
        w.u32(e.n_bins)
        w.u64(e.offset)
        w.u64(e.length)
    w.pad_to(8)
    return w.getvalue()


def write_runfile(path, instrument: str, run_number: int, start_time: int, datasets) -> None:
    """Serialize datasets to a new run file at `path`."""
    datasets = list(datasets)
    blocks = [encode_dataset_block(ds) for ds in datasets]
    provisional = [
        DirectoryEntry(
            name=ds.title,
            kind=_dataset_kind(ds),
            n_spectra=len(ds.spectra),
            n_bins=_dataset_n_bins(ds),
            offset=0,
            length=len(block),
        )
        for ds, block in zip(datasets, blocks)
    ]
    header_len = len(_serialize_header(instrument, run_number, start_time, provisional))
    entries = []
    offset = header_len
    for e in provisional:
        entries.append(
            DirectoryEntry(e.name, e.kind, e.n_spectra, e.n_bins, offset, e.length)
        )
        offset += e.length
    header = _serialize_header(instrument, run_number, start_time, entries)
    assert len(header) == header_len
    try:
        with open(path, "wb") as f:
            f.write(header)
            for block in blocks:
                f.write(block)
    except OSError as e:
        raise RunFileError(f"cannot write run file {path}: {e}") from e


def write_run(path, run: Run) -> None:
    write_runfile(path, run.instrument, run.run_number, run.start_time, run.datasets)
