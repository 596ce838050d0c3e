"""Pure reduction transforms over datasets.

Time focusing, unit conversion, rebinning, grouping, normalization, merging,
relabeling, extraction and sorting.  Every operation leaves its inputs
untouched and returns fresh values, so they compose and parallelize freely.

Angle convention used throughout: theta is the Bragg half-angle, i.e. half
the scattering angle 2theta between the beam and the detector.  Geometry
carries 2theta; operators halve it.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import (
    Attribute,
    DataSet,
    DetectorGeometry,
    ExplicitXScale,
    Spectrum,
    UniformXScale,
    XScale,
    XUnits,
    attrs_set,
)

__all__ = [
    "H_OVER_MN",
    "FocusParams",
    "focus_factor",
    "time_focus",
    "convert_units",
    "rebin_histogram",
    "rebin",
    "group_spectra",
    "normalize",
    "merge",
    "relabel",
    "extract_group",
    "sort_spectra",
]

# Planck constant over neutron mass, m^2/s.  Fixes the de Broglie relation
# lambda = (h/m_n) * t / L used by every unit conversion below.
H_OVER_MN = 3.9560339e-7

# CODATA h = 6.62607015e-34 J*s, m_n = 1.67492749804e-27 kg.  The working
# constant above must agree with the quotient to 1e-6 relative.
_H_OVER_MN_CODATA = 6.62607015e-34 / 1.67492749804e-27
assert abs(H_OVER_MN - _H_OVER_MN_CODATA) / _H_OVER_MN_CODATA < 1e-6


@dataclass(frozen=True)
class FocusParams:
    """Reference geometry that a focused bank is scaled onto."""

    ref_theta_rad: float  # Bragg half-angle of the reference
    ref_l2_m: float
    ref_l1_m: float

    def __post_init__(self) -> None:
        if not 0.0 < self.ref_theta_rad < math.pi / 2:
            raise ValueError(
                f"reference theta must be in (0, pi/2), got {self.ref_theta_rad}"
            )
        if self.ref_l1_m <= 0.0 or self.ref_l2_m <= 0.0:
            raise ValueError("reference flight paths must be > 0")

    @property
    def ref_total_path_m(self) -> float:
        return self.ref_l1_m + self.ref_l2_m

    def reference_geometry(self) -> DetectorGeometry:
        """Detector position equivalent to the reference (in the x-z plane)."""
        two_theta = 2.0 * self.ref_theta_rad
        return DetectorGeometry(
            position=(
                self.ref_l2_m * math.sin(two_theta),
                0.0,
                self.ref_l2_m * math.cos(two_theta),
            ),
            l1_m=self.ref_l1_m,
        )


def focus_factor(l_i_m: float, theta_i_rad: float, l_r_m: float, theta_r_rad: float) -> float:
    """Time-focusing correction (L_i sin theta_i) / (L_r sin theta_r).

    L is the total flight path L1+L2 of the element and of the reference.
    """
    for name, value in (("l_i_m", l_i_m), ("l_r_m", l_r_m)):
        if value <= 0.0:
            raise ValueError(f"{name} must be > 0, got {value}")
    for name, value in (("theta_i_rad", theta_i_rad), ("theta_r_rad", theta_r_rad)):
        if not 0.0 < value < math.pi / 2:
            raise ValueError(f"{name} must be in (0, pi/2), got {value}")
    return (l_i_m * math.sin(theta_i_rad)) / (l_r_m * math.sin(theta_r_rad))


def _scaled_xscale(xscale: XScale, factor: float) -> XScale:
    if isinstance(xscale, UniformXScale):
        return UniformXScale(xscale.start * factor, xscale.end * factor, xscale.nbins)
    return ExplicitXScale(xscale.edges * factor)


def time_focus(ds: DataSet, fp: FocusParams) -> DataSet:
    """Scale each spectrum's time-of-flight axis onto the reference geometry.

    Edges map t' = t / f with f = focus_factor(L1+L2, theta, ref L1+L2,
    ref theta); counts and errors are untouched.  Every output spectrum
    carries the reference geometry so downstream conversions use (L_r,
    theta_r).
    """
    if ds.x_units is not XUnits.TOF_US:
        raise ValueError(f"time_focus needs tof_us data, dataset is in {ds.x_units.value}")
    ref_geom = fp.reference_geometry()
    out = []
    for s in ds.spectra:
        g = s.geometry
        if g is None:
            raise ValueError(f"spectrum {s.id} has no geometry, cannot focus")
        f = focus_factor(g.l1_m + g.l2_m, g.theta_rad, fp.ref_total_path_m, fp.ref_theta_rad)
        out.append(replace(s, xscale=_scaled_xscale(s.xscale, 1.0 / f), geometry=ref_geom))
    return replace(ds, spectra=tuple(out))


_CONVERT_TARGETS = (XUnits.WAVELENGTH_A, XUnits.DSPACING_A, XUnits.Q_INV_A)


def convert_units(ds: DataSet, target: XUnits | str) -> DataSet:
    """Convert a time-of-flight dataset to wavelength, d-spacing or Q.

    With total path L = L1+L2 in meters and t in seconds:
    lambda[A] = 1e10 * (h/m_n) * t / L, d = lambda / (2 sin theta),
    Q = 4 pi sin theta / lambda = 2 pi / d.

    Counts are per-bin totals and move with their bins (no density
    rescaling).  Q decreases with t, so edges and count arrays are reversed
    to keep edges increasing.
    """
    target = XUnits(target)
    if target not in _CONVERT_TARGETS:
        allowed = ", ".join(u.value for u in _CONVERT_TARGETS)
        raise ValueError(f"conversion target must be one of {allowed}, got {target.value}")
    if ds.x_units is not XUnits.TOF_US:
        raise ValueError(f"can only convert from tof_us, dataset is in {ds.x_units.value}")

    out = []
    for s in ds.spectra:
        g = s.geometry
        if g is None:
            raise ValueError(f"spectrum {s.id} has no geometry, cannot convert units")
        total_path = g.l1_m + g.l2_m
        # edges are in microseconds: 1e10 * (h/m_n) * 1e-6 / L  [A per us]
        lam_per_us = 1e4 * H_OVER_MN / total_path
        if target is XUnits.WAVELENGTH_A:
            out.append(replace(s, xscale=_scaled_xscale(s.xscale, lam_per_us)))
            continue
        sin_theta = math.sin(g.theta_rad)
        if sin_theta <= 0.0:
            raise ValueError(
                f"spectrum {s.id}: theta = 0 leaves d and Q undefined"
            )
        if s.xscale.edges[0] <= 0.0:
            raise ValueError(
                f"spectrum {s.id}: nonpositive time edge {s.xscale.edges[0]}"
                f" maps to infinite Q / degenerate d"
            )
        if target is XUnits.DSPACING_A:
            out.append(replace(s, xscale=_scaled_xscale(s.xscale, lam_per_us / (2.0 * sin_theta))))
        else:
            k = 4.0 * math.pi * sin_theta / lam_per_us  # Q = k / t_us
            q_edges = (k / s.xscale.edges)[::-1]
            out.append(
                replace(
                    s,
                    xscale=ExplicitXScale(q_edges),
                    counts=s.counts[::-1],
                    errors=s.errors[::-1],
                )
            )
    return replace(ds, x_units=target, spectra=tuple(out))


def rebin_histogram(old_edges: np.ndarray, values: np.ndarray, new_edges: np.ndarray) -> np.ndarray:
    """Redistribute per-bin values onto new edges by fractional overlap.

    out_j = sum_i overlap(i,j)/width(i) * values_i.  Values outside the new
    range are dropped.  Implemented on the union of both edge sets: every
    elementary segment lies in exactly one old and one new bin, so each
    contribution is a plain product with no cancellation.  That keeps zero
    bins exactly zero and makes split-then-recombine elementwise accurate.

    Everything happens in float64; callers decide the storage dtype.
    """
    old = np.asarray(old_edges, dtype=np.float64)
    new = np.asarray(new_edges, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    n_new = new.size - 1
    lo = max(old[0], new[0])
    hi = min(old[-1], new[-1])
    if lo >= hi:
        return np.zeros(n_new)
    edges = np.union1d(old, new)
    edges = edges[(edges >= lo) & (edges <= hi)]
    if edges.size < 2:
        return np.zeros(n_new)
    a, b = edges[:-1], edges[1:]
    mid = 0.5 * (a + b)
    i = np.searchsorted(old, mid, side="right") - 1
    j = np.searchsorted(new, mid, side="right") - 1
    valid = (i >= 0) & (i < v.size) & (j >= 0) & (j < n_new)
    frac = (b[valid] - a[valid]) / np.diff(old)[i[valid]]
    return np.bincount(j[valid], weights=v[i[valid]] * frac, minlength=n_new)


def rebin(s: Spectrum, new_xscale: XScale) -> Spectrum:
    """Rebin one spectrum onto a new x-scale (same units assumed).

    Variances follow the same overlap fraction as counts, e'^2 = sum f*e^2,
    which keeps split-then-recombine lossless and preserves Poisson
    statistics for unit-fraction overlaps.
    """
    if s.xscale == new_xscale:
        return s
    old_edges = s.xscale.edges
    new_edges = new_xscale.edges
    counts = rebin_histogram(old_edges, s.counts.astype(np.float64), new_edges)
    var = rebin_histogram(old_edges, s.errors.astype(np.float64) ** 2, new_edges)
    return replace(s, xscale=new_xscale, counts=counts, errors=np.sqrt(var))


def group_spectra(ds: DataSet, grouping: Mapping[int, int]) -> DataSet:
    """Sum spectra that share a group id into one spectrum per group.

    Members are rebinned onto the first member's x-scale before summing;
    variances add.  The result keeps the first member's label, geometry and
    attributes (a documented simplification: a summed bank has no single
    true position) and takes the group id as its spectrum id.  Groups appear
    in order of first appearance.
    """
    for s in ds.spectra:
        if s.id not in grouping:
            raise KeyError(f"spectrum id {s.id} missing from grouping")
    members: dict[int, list[Spectrum]] = {}
    order: list[int] = []
    for s in ds.spectra:
        gid = grouping[s.id]
        if gid not in members:
            members[gid] = []
            order.append(gid)
        members[gid].append(s)

    out = []
    for gid in order:
        group = members[gid]
        first = group[0]
        target = first.xscale
        counts = np.zeros(target.nbins, dtype=np.float64)
        var = np.zeros(target.nbins, dtype=np.float64)
        for s in group:
            if s.xscale == target:
                counts += s.counts.astype(np.float64)
                var += s.errors.astype(np.float64) ** 2
            else:
                counts += rebin_histogram(
                    s.xscale.edges, s.counts.astype(np.float64), target.edges
                )
                var += rebin_histogram(
                    s.xscale.edges, s.errors.astype(np.float64) ** 2, target.edges
                )
        out.append(
            replace(
                first,
                id=gid,
                group_id=gid,
                counts=counts,
                errors=np.sqrt(var),
            )
        )
    return replace(ds, spectra=tuple(out))


def normalize(
    ds: DataSet,
    *,
    scalar: Optional[float] = None,
    time_s: Optional[float] = None,
    monitor=None,
) -> DataSet:
    """Divide all counts and errors by a scalar, a live time, or a monitor sum.

    Exactly one mode must be given; monitor may be a Spectrum or a counts
    array.  Each output spectrum records the mode and divisor in a
    "normalized_by" attribute.
    """
    modes = [m for m, v in (("scalar", scalar), ("time", time_s), ("monitor", monitor)) if v is not None]
    if len(modes) != 1:
        raise ValueError(f"normalize needs exactly one of scalar/time_s/monitor, got {modes or 'none'}")
    mode = modes[0]
    if mode == "scalar":
        divisor = float(scalar)
    elif mode == "time":
        divisor = float(time_s)
    else:
        counts = monitor.counts if isinstance(monitor, Spectrum) else monitor
        divisor = float(np.sum(np.asarray(counts), dtype=np.float64))
    if divisor <= 0.0:
        raise ValueError(f"normalization divisor must be > 0, got {divisor} ({mode})")

    stamp = Attribute("normalized_by", f"{mode}:{divisor!r}")
    out = tuple(
        replace(
            s,
            counts=s.counts / np.float32(divisor),
            errors=s.errors / np.float32(divisor),
            attributes=attrs_set(s.attributes, stamp.name, stamp.value),
        )
        for s in ds.spectra
    )
    return replace(ds, spectra=out)


def _join_titles(a: str, b: str) -> str:
    if not a or a == b:
        return b
    if not b:
        return a
    return f"{a} & {b}"


def merge(a: DataSet, b: DataSet) -> DataSet:
    """Concatenate two datasets, b's spectra after a's, ids renumbered 0..n-1.

    An empty dataset merges with anything and adopts the other's units and
    metadata.  Otherwise the x units must match, titles are joined, and only
    dataset attributes present with equal values on both sides survive.
    """
    if not a.spectra:
        base = b
    elif not b.spectra:
        base = a
    else:
        if a.x_units is not b.x_units:
            raise ValueError(
                f"cannot merge datasets with different x units:"
                f" {a.x_units.value} vs {b.x_units.value}"
            )
        shared = tuple(attr for attr in a.attributes if attr in b.attributes)
        base = replace(a, attributes=shared)
    spectra = tuple(
        replace(s, id=i) for i, s in enumerate(a.spectra + b.spectra)
    )
    return replace(base, title=_join_titles(a.title, b.title), spectra=spectra)


_LABEL_PLACEHOLDERS = ("run_number", "start_time", "id")


def relabel(ds: DataSet, template: str) -> DataSet:
    """Set every spectrum's label from a template.

    Placeholders: {run_number}, {start_time}, {id}.  Attribute values come
    from the spectrum first, then the dataset.  Unknown placeholders are
    rejected before any spectrum is touched.
    """
    fields = [f for _, f, _, _ in string.Formatter().parse(template) if f is not None]
    for f in fields:
        name = f.split(".")[0].split("[")[0]
        if name not in _LABEL_PLACEHOLDERS or name != f:
            raise ValueError(f"unknown label placeholder {{{f}}}")

    out = []
    for s in ds.spectra:
        values = {}
        for name in fields:
            if name == "id":
                values[name] = s.id
                continue
            v = s.attr(name)
            if v is None:
                v = ds.attr(name)
            if v is None:
                raise ValueError(
                    f"spectrum {s.id} has no {name!r} attribute for label template"
                )
            values[name] = v
        out.append(replace(s, label=template.format(**values)))
    return replace(ds, spectra=tuple(out))


def extract_group(ds: DataSet, key: str, value) -> DataSet:
    """Dataset of spectra whose attribute `key` equals `value` (may be empty)."""
    wanted = Attribute(key, value).value
    return replace(ds, spectra=tuple(s for s in ds.spectra if s.attr(key) == wanted))


def sort_spectra(ds: DataSet, key: str, ascending: bool = True) -> DataSet:
    """Stable sort of spectra by id, theta, or an attribute value."""

    def resolve(s: Spectrum):
        if key == "id":
            return s.id
        if key == "theta":
            if s.geometry is None:
                raise ValueError(f"spectrum {s.id} has no geometry, cannot sort by theta")
            return s.geometry.theta_rad
        v = s.attr(key)
        if v is None:
            raise ValueError(f"spectrum {s.id} has no {key!r} attribute, cannot sort")
        return v

    keyed = [(resolve(s), s) for s in ds.spectra]
    keyed.sort(key=lambda kv: kv[0], reverse=not ascending)
    return replace(ds, spectra=tuple(s for _, s in keyed))
