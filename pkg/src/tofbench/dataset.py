"""Immutable data model for time-of-flight histogram data.

A Spectrum is one detector element's histogram (x-scale, counts, errors,
attributes); a DataSet is an ordered collection of spectra sharing x-axis
units.  Everything here is immutable after construction: operations return
new values and never touch their inputs, so datasets can be shared freely
between threads.

Counts and errors are stored as 32-bit floats (4 bytes per bin), bin edges
as 64-bit floats.  Bin membership is half-open: [edge[i], edge[i+1]), the
final right edge exclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .memory import track_bytes

__all__ = [
    "XUnits",
    "UniformXScale",
    "ExplicitXScale",
    "XScale",
    "Attribute",
    "AttrValue",
    "RESERVED_ATTRIBUTES",
    "DetectorGeometry",
    "Spectrum",
    "DataSet",
    "make_uniform_xscale",
    "make_explicit_xscale",
    "bin_index",
    "new_spectrum",
    "dataset_select",
    "estimate_dataset_size",
    "dataset_payload_bytes",
]


class XUnits(str, Enum):
    """Units of the x axis.  The string values are the wire/file names."""

    TOF_US = "tof_us"
    WAVELENGTH_A = "wavelength_A"
    DSPACING_A = "dspacing_A"
    Q_INV_A = "Q_invA"


def _frozen_f64(values: Iterable[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class UniformXScale:
    """Uniform bin grid: edge i = start + i*(end-start)/nbins."""

    start: float
    end: float
    nbins: int

    def __post_init__(self) -> None:
        if self.nbins < 1:
            raise ValueError(f"uniform x-scale needs nbins >= 1, got {self.nbins}")
        if not self.start < self.end:
            raise ValueError(
                f"uniform x-scale needs start < end, got [{self.start}, {self.end}]"
            )

    @cached_property
    def edges(self) -> np.ndarray:
        span = self.end - self.start
        arr = self.start + np.arange(self.nbins + 1, dtype=np.float64) * span / self.nbins
        arr.flags.writeable = False
        track_bytes(arr.nbytes)
        return arr

    @property
    def bin_width(self) -> float:
        return (self.end - self.start) / self.nbins

    def coordinate(self, frac: float) -> float:
        """X value at fractional edge index `frac` in [0, nbins]."""
        return self.start + frac * (self.end - self.start) / self.nbins

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, UniformXScale)
            and self.start == other.start
            and self.end == other.end
            and self.nbins == other.nbins
        )


@dataclass(frozen=True, eq=False)
class ExplicitXScale:
    """Arbitrary strictly increasing bin edges."""

    edges: np.ndarray

    def __post_init__(self) -> None:
        arr = _frozen_f64(self.edges)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("explicit x-scale needs at least 2 edges")
        if not np.all(np.diff(arr) > 0):
            raise ValueError("explicit x-scale edges must be strictly increasing")
        object.__setattr__(self, "edges", arr)
        track_bytes(arr.nbytes)

    @property
    def nbins(self) -> int:
        return self.edges.size - 1

    @property
    def start(self) -> float:
        return float(self.edges[0])

    @property
    def end(self) -> float:
        return float(self.edges[-1])

    def coordinate(self, frac: float) -> float:
        """X value at fractional edge index `frac` in [0, nbins]."""
        return float(np.interp(frac, np.arange(self.edges.size), self.edges))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ExplicitXScale) and np.array_equal(self.edges, other.edges)


XScale = Union[UniformXScale, ExplicitXScale]


def make_uniform_xscale(start: float, end: float, nbins: int) -> UniformXScale:
    """Build a uniform x-scale with `nbins` bins over [start, end]."""
    return UniformXScale(float(start), float(end), int(nbins))


def make_explicit_xscale(edges: Iterable[float]) -> ExplicitXScale:
    """Build an x-scale from explicit, strictly increasing edges."""
    return ExplicitXScale(np.asarray(edges, dtype=np.float64))


def bin_index(xscale: XScale, x: float) -> Optional[int]:
    """Index i with edge[i] <= x < edge[i+1]; None when x is out of range.

    The final right edge is exclusive.
    """
    edges = xscale.edges
    if not (edges[0] <= x < edges[-1]):
        return None
    i = int(np.searchsorted(edges, x, side="right")) - 1
    return min(i, xscale.nbins - 1)


# Attribute values are one of: f64, i64, string, or an f64 triple.
AttrValue = Union[float, int, str, tuple]

# Well-known attribute names and their required value types.
RESERVED_ATTRIBUTES: dict[str, type] = {
    "run_number": int,
    "start_time": int,
    "label": str,
    "bank_angle_deg": float,
    "row": int,
    "col": int,
    "monitor": int,
}


@dataclass(frozen=True)
class Attribute:
    """A named metadata value attached to a spectrum or dataset."""

    name: str
    value: AttrValue

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("attribute name must be non-empty")
        value = self.value
        if isinstance(value, bool):
            raise TypeError("attribute values must be f64, i64, string or f64 triple")
        if isinstance(value, (list, tuple, np.ndarray)):
            seq = tuple(float(v) for v in value)
            if len(seq) != 3:
                raise ValueError(f"attribute {self.name!r}: triple must have 3 elements")
            object.__setattr__(self, "value", seq)
        elif isinstance(value, (np.floating,)):
            object.__setattr__(self, "value", float(value))
        elif isinstance(value, (np.integer,)):
            object.__setattr__(self, "value", int(value))
        elif not isinstance(value, (float, int, str)):
            raise TypeError(f"attribute {self.name!r}: unsupported value type {type(value)!r}")
        reserved = RESERVED_ATTRIBUTES.get(self.name)
        if reserved is int:
            v = self.value
            if isinstance(v, float) and v.is_integer():
                object.__setattr__(self, "value", int(v))
            elif not isinstance(v, int):
                raise TypeError(f"reserved attribute {self.name!r} requires an integer value")
        elif reserved is float:
            v = self.value
            if isinstance(v, int):
                object.__setattr__(self, "value", float(v))
            elif not isinstance(v, float):
                raise TypeError(f"reserved attribute {self.name!r} requires a float value")
        elif reserved is str and not isinstance(self.value, str):
            raise TypeError(f"reserved attribute {self.name!r} requires a string value")


def attrs_get(attributes: Sequence[Attribute], name: str) -> Optional[AttrValue]:
    for attr in attributes:
        if attr.name == name:
            return attr.value
    return None


def attrs_set(
    attributes: Sequence[Attribute], name: str, value: AttrValue
) -> tuple[Attribute, ...]:
    """Return a new attribute tuple with (name, value) set, replacing any duplicate."""
    kept = tuple(a for a in attributes if a.name != name)
    return kept + (Attribute(name, value),)


@dataclass(frozen=True)
class DetectorGeometry:
    """Per-pixel geometry: position relative to the sample, beam along +z.

    The secondary flight path L2 and the scattering angle follow from the
    position; the Bragg angle theta is always half the scattering angle 2theta.
    """

    position: tuple  # (x, y, z) meters from the sample
    l1_m: float  # primary (source-to-sample) flight path
    solid_angle_sr: float = 0.0
    efficiency: float = 1.0

    def __post_init__(self) -> None:
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise ValueError("detector position must be an (x, y, z) triple")
        object.__setattr__(self, "position", pos)
        if math.hypot(*pos) <= 0.0:
            raise ValueError("detector position must have |position| > 0")
        if not self.l1_m > 0.0:
            raise ValueError(f"primary flight path must be > 0, got {self.l1_m}")
        if self.solid_angle_sr < 0.0:
            raise ValueError("solid angle must be >= 0")

    @property
    def l2_m(self) -> float:
        """Secondary flight path: sample-to-pixel distance."""
        return math.hypot(*self.position)

    @property
    def two_theta_rad(self) -> float:
        """Scattering angle between the +z beam direction and the pixel."""
        x, y, z = self.position
        return math.acos(max(-1.0, min(1.0, z / self.l2_m)))

    @property
    def theta_rad(self) -> float:
        """Bragg half-angle (half of the scattering angle)."""
        return 0.5 * self.two_theta_rad


def _frozen_f32(values, n_expected: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1 or arr.size != n_expected:
        raise ValueError(f"{what} length {arr.size} does not match bin count {n_expected}")
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One detector element's histogram.

    counts[i] is the number of events with x in [edge[i], edge[i+1]).
    """

    id: int
    xscale: XScale
    counts: np.ndarray
    errors: np.ndarray
    group_id: int = 0
    label: str = ""
    geometry: Optional[DetectorGeometry] = None
    attributes: tuple = ()

    def __post_init__(self) -> None:
        nbins = self.xscale.nbins
        counts = _frozen_f32(self.counts, nbins, "counts")
        errors = _frozen_f32(self.errors, nbins, "errors")
        if np.any(errors < 0):
            raise ValueError("errors must be >= 0 elementwise")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "errors", errors)
        object.__setattr__(self, "attributes", tuple(self.attributes))
        track_bytes(counts.nbytes + errors.nbytes)

    @property
    def nbins(self) -> int:
        return self.xscale.nbins

    def attr(self, name: str) -> Optional[AttrValue]:
        return attrs_get(self.attributes, name)

    @property
    def payload_bytes(self) -> int:
        """Histogram payload: counts + errors at 4 bytes each, explicit edges at 8."""
        total = self.counts.nbytes + self.errors.nbytes
        if isinstance(self.xscale, ExplicitXScale):
            total += self.xscale.edges.nbytes
        return total

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Spectrum):
            return NotImplemented
        return (
            self.id == other.id
            and self.group_id == other.group_id
            and self.label == other.label
            and self.xscale == other.xscale
            and self.geometry == other.geometry
            and self.attributes == other.attributes
            and np.array_equal(self.counts, other.counts, equal_nan=True)
            and np.array_equal(self.errors, other.errors, equal_nan=True)
        )


def new_spectrum(
    xscale: XScale,
    counts,
    errors=None,
    attrs: Sequence[Attribute] = (),
    *,
    id: int = 0,
    group_id: int = 0,
    label: str = "",
    geometry: Optional[DetectorGeometry] = None,
) -> Spectrum:
    """Build a spectrum, defaulting errors to Poisson sqrt(max(counts, 0))."""
    if errors is None:
        c = np.asarray(counts, dtype=np.float32)
        errors = np.sqrt(np.maximum(c, 0.0))
    return Spectrum(
        id=id,
        xscale=xscale,
        counts=counts,
        errors=errors,
        group_id=group_id,
        label=label,
        geometry=geometry,
        attributes=tuple(attrs),
    )


@dataclass(frozen=True, eq=False)
class DataSet:
    """Ordered spectra sharing x-axis units; the unit of viewing and operation."""

    title: str
    x_units: XUnits
    spectra: tuple = ()
    y_units: str = "counts"
    attributes: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_units", XUnits(self.x_units))
        object.__setattr__(self, "spectra", tuple(self.spectra))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        seen: set[int] = set()
        for s in self.spectra:
            if s.id in seen:
                raise ValueError(f"duplicate spectrum id {s.id} in dataset {self.title!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.spectra)

    @property
    def ids(self) -> tuple:
        return tuple(s.id for s in self.spectra)

    def get(self, spectrum_id: int) -> Spectrum:
        for s in self.spectra:
            if s.id == spectrum_id:
                return s
        raise KeyError(f"no spectrum with id {spectrum_id}")

    def attr(self, name: str) -> Optional[AttrValue]:
        return attrs_get(self.attributes, name)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataSet):
            return NotImplemented
        return (
            self.title == other.title
            and self.x_units == other.x_units
            and self.y_units == other.y_units
            and self.attributes == other.attributes
            and self.spectra == other.spectra
        )


def dataset_select(ds: DataSet, ids: Sequence[int]) -> DataSet:
    """New dataset with only the given spectrum ids, original order preserved."""
    known = set(ds.ids)
    for i in ids:
        if i not in known:
            raise KeyError(f"unknown spectrum id {i} in dataset {ds.title!r}")
    wanted = set(ids)
    return replace(ds, spectra=tuple(s for s in ds.spectra if s.id in wanted))


def estimate_dataset_size(
    n_pixels: int,
    n_channels: int,
    bytes_per_bin: int = 4,
    effective_groups: Optional[int] = None,
) -> int:
    """Histogram-array size in bytes for an instrument's raw dataset.

    Where acquisition hardware sums banks of detectors, the stored spectrum
    count is the group count, not the pixel count; pass `effective_groups`
    to account for that instead of guessing a grouping.
    """
    if effective_groups is not None:
        if effective_groups < 1:
            raise ValueError("effective_groups must be >= 1")
        n_pixels = effective_groups
    if n_pixels < 1 or n_channels < 1 or bytes_per_bin < 1:
        raise ValueError("all size factors must be >= 1")
    return int(n_pixels) * int(n_channels) * int(bytes_per_bin)


def dataset_payload_bytes(ds: DataSet) -> int:
    """Total histogram payload of a dataset (counts + errors + explicit edges)."""
    return sum(s.payload_bytes for s in ds.spectra)
