"""View computations: image raster, cursor readout, time slices, point cloud.

Everything here is a pure function over immutable datasets, so identical
inputs always give byte-identical results and concurrent callers never
interfere.  The raster model follows the instrument-display conventions:
spectra map to horizontal lines (replicated when the window is taller
than the data, scrolled when it is shorter, never squeezed), while the
x axis may be windowed-max compressed to fit the width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .colormap import IntensityScale, map_to_indices
from .dataset import DataSet, Spectrum
from .memory import track_bytes

__all__ = [
    "Viewport",
    "RasterResult",
    "CursorReadout",
    "CloudPoint",
    "image_raster",
    "cursor_readout",
    "pointed_spectrum",
    "time_slice",
    "point_cloud",
    "find_slice_for_cursor",
    "pgm_bytes",
    "write_pgm",
]


@dataclass(frozen=True)
class Viewport:
    """Where and how a dataset is projected onto a pixel grid."""

    width_px: int
    height_px: int
    row_offset: int = 0
    col_offset: int = 0
    horizontal_compression: bool = True
    intensity_scale: IntensityScale = IntensityScale.LINEAR

    def __post_init__(self) -> None:
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError(
                f"viewport must be at least 1x1, got {self.width_px}x{self.height_px}"
            )
        if self.row_offset < 0 or self.col_offset < 0:
            raise ValueError("viewport offsets must be >= 0")
        object.__setattr__(
            self, "intensity_scale", IntensityScale(self.intensity_scale)
        )


@dataclass(frozen=True, eq=False)
class RasterResult:
    """A rendered index image plus the maps that make it explorable.

    row_map[r] is the spectrum id shown on screen row r (-1 past the
    data); col_map[c] is the half-open bin range [lo, hi) aggregated into
    screen column c (lo == hi for columns past the data).  value_range
    brackets every aggregated value that was actually rendered.
    """

    pixels: np.ndarray
    row_map: np.ndarray
    col_map: np.ndarray
    value_range: tuple

    def __post_init__(self) -> None:
        for name in ("pixels", "row_map", "col_map"):
            arr = getattr(self, name)
            if arr.flags.writeable:
                arr = arr.copy()
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 2:
            raise ValueError("pixels must be a 2-D u8 array")
        if self.row_map.shape != (self.pixels.shape[0],):
            raise ValueError("row_map must have one entry per screen row")
        if self.col_map.shape != (self.pixels.shape[1], 2):
            raise ValueError("col_map must be one [lo, hi) pair per screen column")
        object.__setattr__(
            self, "value_range", (float(self.value_range[0]), float(self.value_range[1]))
        )
        track_bytes(self.pixels.nbytes)


def _shared_nbins(ds: DataSet) -> int:
    if not ds.spectra:
        return 0
    nbins = ds.spectra[0].nbins
    for s in ds.spectra:
        if s.nbins != nbins:
            raise ValueError(
                f"dataset {ds.title!r} mixes bin counts ({nbins} vs {s.nbins});"
                " it cannot be rastered on one column grid"
            )
    return nbins


def _column_windows(nbins: int, vp: Viewport) -> np.ndarray:
    """[lo, hi) source-bin window per screen column."""
    cols = np.arange(vp.width_px, dtype=np.int64)
    if vp.horizontal_compression and nbins > vp.width_px:
        lo = cols * nbins // vp.width_px
        hi = (cols + 1) * nbins // vp.width_px
    else:
        offset = 0 if vp.horizontal_compression else vp.col_offset
        lo = np.minimum(cols + offset, nbins)
        hi = np.minimum(lo + 1, nbins)
    return np.stack([lo, hi], axis=1)


def _aggregate_row(counts: np.ndarray, windows: np.ndarray, aggregation: str) -> np.ndarray:
    values = np.zeros(len(windows), dtype=np.float64)
    c = counts.astype(np.float64)
    if aggregation == "max":
        reducer = np.maximum.reduceat
    elif aggregation == "mean":
        reducer = None
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}; use 'max' or 'mean'")
    nonempty = windows[:, 1] > windows[:, 0]
    if not nonempty.any():
        return values
    lo = windows[nonempty, 0]
    hi = windows[nonempty, 1]
    if reducer is not None and np.array_equal(lo[1:], hi[:-1]) and hi[-1] == len(c):
        # contiguous partition of the bins: one vectorized reduceat
        values[nonempty] = reducer(c, lo)
    else:
        sums = np.concatenate([[0.0], np.cumsum(c)])
        if aggregation == "mean":
            values[nonempty] = (sums[hi] - sums[lo]) / (hi - lo)
        else:
            values[nonempty] = [c[a:b].max() for a, b in zip(lo, hi)]
    return values


def image_raster(ds: DataSet, vp: Viewport, aggregation: str = "max") -> RasterResult:
    """Render the dataset into a u8 index image under the viewport.

    One spectrum per screen row from row_offset down, replicated to fill
    the height when there are fewer spectra than rows.  Columns cover the
    bins per `_column_windows`; multi-bin columns aggregate by max so a
    narrow peak still shows (pass aggregation="mean" to smooth instead).
    Dead spectra (zero total counts) render as index 0 across the row.
    """
    nbins = _shared_nbins(ds)
    n_after = len(ds.spectra) - vp.row_offset
    windows = _column_windows(nbins, vp)
    pixels = np.zeros((vp.height_px, vp.width_px), dtype=np.uint8)
    row_map = np.full(vp.height_px, -1, dtype=np.int64)
    if n_after <= 0:
        return RasterResult(pixels, row_map, windows, (0.0, 0.0))

    rows_per_spectrum = max(1, vp.height_px // n_after)
    screen_rows = np.arange(vp.height_px)
    spec_index = vp.row_offset + screen_rows // rows_per_spectrum
    visible = spec_index < len(ds.spectra)

    drawn: dict[int, Optional[np.ndarray]] = {}
    v_lo: Optional[float] = None
    v_hi: Optional[float] = None
    for idx in np.unique(spec_index[visible]):
        s = ds.spectra[int(idx)]
        if float(np.sum(s.counts, dtype=np.float64)) == 0.0:
            drawn[int(idx)] = None  # dead detector: flat index 0
            continue
        values = _aggregate_row(s.counts, windows, aggregation)
        drawn[int(idx)] = values
        if values.size:
            v_lo = float(values.min()) if v_lo is None else min(v_lo, float(values.min()))
            v_hi = float(values.max()) if v_hi is None else max(v_hi, float(values.max()))

    value_range = (v_lo if v_lo is not None else 0.0, v_hi if v_hi is not None else 0.0)
    index_rows = {
        idx: (
            np.zeros(vp.width_px, dtype=np.uint8)
            if values is None
            else map_to_indices(values, vp.intensity_scale, value_range)
        )
        for idx, values in drawn.items()
    }
    for r in screen_rows[visible]:
        idx = int(spec_index[r])
        pixels[r] = index_rows[idx]
        row_map[r] = ds.spectra[idx].id
    pixels.flags.writeable = False
    row_map.flags.writeable = False
    windows.flags.writeable = False
    return RasterResult(pixels, row_map, windows, value_range)


@dataclass(frozen=True)
class CursorReadout:
    """What the crosshair is on: identity, coordinates, raw value."""

    spectrum_id: int
    label: str
    x_at_cursor: float
    y_value: float
    bin_index: int


def _row_spectrum(ds: DataSet, rr: RasterResult, py: int) -> Spectrum:
    if not 0 <= py < len(rr.row_map):
        raise ValueError(f"cursor row {py} is outside the {len(rr.row_map)}-row raster")
    sid = int(rr.row_map[py])
    if sid < 0:
        raise ValueError(f"cursor row {py} is below the last spectrum")
    return ds.get(sid)


def cursor_readout(ds: DataSet, rr: RasterResult, px: int, py: int) -> CursorReadout:
    """Resolve a raster pixel back to (spectrum, bin, value).

    A compressed column reports the bin holding the window maximum, the
    same bin the renderer colored the pixel by.
    """
    s = _row_spectrum(ds, rr, py)
    if not 0 <= px < len(rr.col_map):
        raise ValueError(f"cursor column {px} is outside the {len(rr.col_map)}-column raster")
    lo, hi = (int(v) for v in rr.col_map[px])
    if lo >= hi:
        raise ValueError(f"cursor column {px} is past the last bin")
    window = s.counts[lo:hi]
    bin_index = lo + int(np.argmax(window))
    return CursorReadout(
        spectrum_id=s.id,
        label=s.label,
        x_at_cursor=s.xscale.coordinate(bin_index + 0.5),
        y_value=float(s.counts[bin_index]),
        bin_index=bin_index,
    )


def pointed_spectrum(ds: DataSet, rr: RasterResult, py: int) -> Spectrum:
    """The full spectrum under screen row py, for the linked line plot."""
    return _row_spectrum(ds, rr, py)


def find_slice_for_cursor(ds: DataSet, rr: RasterResult, px: int, py: int) -> int:
    """The channel a linked slice view must jump to for this cursor position."""
    return cursor_readout(ds, rr, px, py).bin_index


def time_slice(ds: DataSet, channel: int) -> np.ndarray:
    """Counts at one channel arranged on the detector (row, col) grid.

    Every spectrum must carry integer "row" and "col" attributes; grid
    cells no spectrum claims stay 0.
    """
    if not ds.spectra:
        return np.zeros((0, 0), dtype=np.float32)
    rows = []
    cols = []
    for s in ds.spectra:
        r, c = s.attr("row"), s.attr("col")
        if r is None or c is None:
            raise ValueError(f"spectrum {s.id} lacks row/col attributes")
        if not 0 <= channel < s.nbins:
            raise ValueError(
                f"channel {channel} out of range for spectrum {s.id}"
                f" with {s.nbins} bins"
            )
        rows.append(int(r))
        cols.append(int(c))
    grid = np.zeros((max(rows) + 1, max(cols) + 1), dtype=np.float32)
    values = np.array([s.counts[channel] for s in ds.spectra], dtype=np.float32)
    np.add.at(grid, (np.array(rows), np.array(cols)), values)
    return grid


@dataclass(frozen=True)
class CloudPoint:
    x: float
    y: float
    z: float
    intensity: float


def point_cloud(ds: DataSet, channel: Optional[int] = None) -> list:
    """One point per spectrum at its detector position.

    Intensity is the total count (channel None), which draws the detector
    layout itself, or the single channel's count for stepping through time.
    """
    points = []
    for s in ds.spectra:
        if s.geometry is None:
            raise ValueError(f"spectrum {s.id} has no geometry")
        if channel is None:
            intensity = float(np.sum(s.counts, dtype=np.float64))
        else:
            if not 0 <= channel < s.nbins:
                raise ValueError(
                    f"channel {channel} out of range for spectrum {s.id}"
                    f" with {s.nbins} bins"
                )
            intensity = float(s.counts[channel])
        x, y, z = s.geometry.position
        points.append(CloudPoint(x, y, z, intensity))
    return points


def pgm_bytes(pixels: np.ndarray) -> bytes:
    """Binary PGM (P5) encoding of a u8 index image."""
    arr = np.ascontiguousarray(pixels, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError("PGM export needs a 2-D u8 image")
    height, width = arr.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + arr.tobytes()


def write_pgm(pixels: np.ndarray, path) -> None:
    with open(path, "wb") as f:
        f.write(pgm_bytes(pixels))
