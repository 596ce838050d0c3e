"""Single-crystal pipeline: peak search, centroiding, integration, Q vectors,
UB refinement and indexing.

Conventions, stated once and used everywhere:
  - q = 2*pi * UB * h  (UB in 1/Angstrom per Miller index)
  - goniometer rotation R = Rz(omega) * Rx(chi) * Rz(phi);
    lab -> sample is the inverse, q_sample = R^T * q_lab
  - the beam travels along +z; q = k * (p_hat - z_hat) with k = 2*pi/lambda
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .dataset import (
    Attribute,
    DataSet,
    DetectorGeometry,
    XScale,
    XUnits,
    new_spectrum,
)
from .memory import track_bytes
from .operators import H_OVER_MN

__all__ = [
    "DetectorVolume",
    "Peak",
    "UBMatrix",
    "GoniometerSetting",
    "goniometer_matrix",
    "find_peaks",
    "centroid",
    "integrate_peak",
    "peak_to_q",
    "apply_goniometer",
    "refine_ub",
    "index_peaks",
    "write_peaks",
    "dataset_to_volume",
    "volume_to_dataset",
]


@dataclass(frozen=True, eq=False)
class DetectorVolume:
    """Area-detector histogram stack: counts[row][col][channel].

    pixel_geometry maps (row, col) to that pixel's geometry; l1_m is the
    primary flight path used for TOF-to-wavelength conversion.
    """

    tof_scale: XScale
    counts: np.ndarray
    pixel_geometry: Callable[[int, int], DetectorGeometry]
    l1_m: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.counts, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"volume counts must be 3-D, got shape {arr.shape}")
        if arr.shape[2] != self.tof_scale.nbins:
            raise ValueError(
                f"volume has {arr.shape[2]} channels but the TOF scale has"
                f" {self.tof_scale.nbins} bins"
            )
        if self.l1_m <= 0:
            raise ValueError(f"primary flight path must be > 0, got {self.l1_m}")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "counts", arr)
        track_bytes(arr.nbytes)

    @property
    def n_rows(self) -> int:
        return self.counts.shape[0]

    @property
    def n_cols(self) -> int:
        return self.counts.shape[1]

    @property
    def n_channels(self) -> int:
        return self.counts.shape[2]


@dataclass(frozen=True)
class Peak:
    """One reflection candidate; coordinates are fractional voxel indices."""

    row: float
    col: float
    channel: float
    intensity: float
    sigma_intensity: float
    q: tuple = (0.0, 0.0, 0.0)
    hkl: Optional[tuple] = None
    orientation_index: int = 0

    def __post_init__(self) -> None:
        if self.row < 0 or self.col < 0 or self.channel < 0:
            raise ValueError("peak coordinates must be non-negative")
        if self.sigma_intensity < 0:
            raise ValueError("sigma_intensity must be >= 0")
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        if self.hkl is not None:
            object.__setattr__(self, "hkl", tuple(int(v) for v in self.hkl))


@dataclass(frozen=True, eq=False)
class UBMatrix:
    """Orientation-and-lattice matrix under q = 2*pi * UB * h."""

    m: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.m, dtype=np.float64)
        if arr.shape != (3, 3):
            raise ValueError(f"UB must be 3x3, got {arr.shape}")
        if abs(np.linalg.det(arr)) < 1e-300:
            raise ValueError("UB matrix is singular")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "m", arr)

    @cached_property
    def inverse(self) -> np.ndarray:
        inv = np.linalg.inv(self.m)
        inv.flags.writeable = False
        return inv

    def __eq__(self, other: object) -> bool:
        return isinstance(other, UBMatrix) and np.array_equal(self.m, other.m)


@dataclass(frozen=True)
class GoniometerSetting:
    """Sample-rotation angles in radians."""

    chi: float
    phi: float
    omega: float


def _rz(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rx(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def goniometer_matrix(g: GoniometerSetting) -> np.ndarray:
    """Sample -> lab rotation, R = Rz(omega) * Rx(chi) * Rz(phi)."""
    return _rz(g.omega) @ _rx(g.chi) @ _rz(g.phi)


def apply_goniometer(q_lab, g: GoniometerSetting) -> np.ndarray:
    """Rotate a lab-frame q into the sample frame (inverse of the goniometer)."""
    return goniometer_matrix(g).T @ np.asarray(q_lab, dtype=np.float64)


_NEIGHBOR_OFFSETS = [
    (dr, dc, dch)
    for dr in (-1, 0, 1)
    for dc in (-1, 0, 1)
    for dch in (-1, 0, 1)
    if (dr, dc, dch) != (0, 0, 0)
]


def find_peaks(
    vol: DetectorVolume, k_sigma: float, max_peaks: int, min_sep: int
) -> list:
    """Locate strict 3x3x3 local maxima above mean + k_sigma*stddev.

    Candidates are sorted by intensity (ties broken by coordinates for
    determinism) and greedily thinned: anything within Chebyshev distance
    min_sep of an already accepted peak is suppressed.  At most max_peaks
    survive.  The threshold is in sigma units, so the result is invariant
    under positive scaling of the volume.
    """
    if k_sigma <= 0:
        raise ValueError(f"k_sigma must be > 0, got {k_sigma}")
    counts = vol.counts
    mean = float(counts.mean(dtype=np.float64))
    std = float(counts.std(dtype=np.float64))
    threshold = mean + k_sigma * std

    padded = np.full(
        (counts.shape[0] + 2, counts.shape[1] + 2, counts.shape[2] + 2),
        -np.inf,
        dtype=np.float64,
    )
    padded[1:-1, 1:-1, 1:-1] = counts
    is_max = counts > threshold
    nr, nc, nch = counts.shape
    for dr, dc, dch in _NEIGHBOR_OFFSETS:
        if not is_max.any():
            break
        neighbor = padded[1 + dr : 1 + dr + nr, 1 + dc : 1 + dc + nc, 1 + dch : 1 + dch + nch]
        is_max &= counts > neighbor

    coords = np.argwhere(is_max)
    if coords.size == 0:
        return []
    values = counts[coords[:, 0], coords[:, 1], coords[:, 2]].astype(np.float64)
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], -values))
    accepted: list = []
    accepted_coords: list = []
    for idx in order:
        r, c, ch = (int(v) for v in coords[idx])
        if any(
            max(abs(r - ar), abs(c - ac), abs(ch - ach)) <= min_sep
            for ar, ac, ach in accepted_coords
        ):
            continue
        v = float(values[idx])
        accepted.append(
            Peak(
                row=float(r),
                col=float(c),
                channel=float(ch),
                intensity=v,
                sigma_intensity=math.sqrt(max(v, 0.0)),
            )
        )
        accepted_coords.append((r, c, ch))
        if len(accepted) >= max_peaks:
            break
    return accepted


def _clipped_box(vol: DetectorVolume, p: Peak, radius: int):
    r0, c0, ch0 = int(round(p.row)), int(round(p.col)), int(round(p.channel))
    rs = slice(max(r0 - radius, 0), min(r0 + radius + 1, vol.n_rows))
    cs = slice(max(c0 - radius, 0), min(c0 + radius + 1, vol.n_cols))
    chs = slice(max(ch0 - radius, 0), min(ch0 + radius + 1, vol.n_channels))
    return rs, cs, chs


def centroid(vol: DetectorVolume, p: Peak, radius: int = 2) -> Peak:
    """Refine a peak position to the intensity-weighted centroid of a box.

    The box is +-radius voxels around the rounded position, clipped to the
    volume.  Intensity becomes the box sum.
    """
    rs, cs, chs = _clipped_box(vol, p, radius)
    box = vol.counts[rs, cs, chs].astype(np.float64)
    total = float(box.sum())
    if total <= 0:
        raise ValueError(
            f"cannot centroid at ({p.row:.1f}, {p.col:.1f}, {p.channel:.1f}):"
            f" box sum is {total}"
        )
    rr, cc, chch = np.meshgrid(
        np.arange(rs.start, rs.stop),
        np.arange(cs.start, cs.stop),
        np.arange(chs.start, chs.stop),
        indexing="ij",
    )
    return replace(
        p,
        row=float((box * rr).sum() / total),
        col=float((box * cc).sum() / total),
        channel=float((box * chch).sum() / total),
        intensity=total,
        sigma_intensity=math.sqrt(max(total, 0.0)),
    )


def integrate_peak(vol: DetectorVolume, p: Peak, box: int, shell: int) -> tuple:
    """Background-subtracted intensity via a box with a surrounding shell.

    I = sum(box) - n_box * mean(shell); sigma^2 = sum(box)
    + n_box^2 * sum(shell) / n_shell^2 (Poisson propagation).
    """
    if box >= shell:
        raise ValueError(f"box ({box}) must be smaller than shell ({shell})")
    rs, cs, chs = _clipped_box(vol, p, shell)
    region = vol.counts[rs, cs, chs].astype(np.float64)
    r0, c0, ch0 = int(round(p.row)), int(round(p.col)), int(round(p.channel))
    rr, cc, chch = np.meshgrid(
        np.arange(rs.start, rs.stop) - r0,
        np.arange(cs.start, cs.stop) - c0,
        np.arange(chs.start, chs.stop) - ch0,
        indexing="ij",
    )
    cheb = np.maximum(np.maximum(np.abs(rr), np.abs(cc)), np.abs(chch))
    in_box = cheb <= box
    in_shell = (cheb > box) & (cheb <= shell)
    n_box = int(in_box.sum())
    n_shell = int(in_shell.sum())
    if n_shell == 0:
        raise ValueError("background shell is empty after clipping to the volume")
    sum_box = float(region[in_box].sum())
    sum_shell = float(region[in_shell].sum())
    intensity = sum_box - n_box * (sum_shell / n_shell)
    variance = sum_box + (n_box * n_box) * sum_shell / (n_shell * n_shell)
    return intensity, math.sqrt(max(variance, 0.0))


def peak_to_q(p: Peak, vol: DetectorVolume) -> Peak:
    """Fill in the lab-frame scattering vector q = (2*pi/lambda)*(p_hat - z_hat).

    lambda comes from the TOF at the peak channel's bin center over the
    total flight path L1 + |pixel position|.
    """
    geom = vol.pixel_geometry(int(round(p.row)), int(round(p.col)))
    pos = np.asarray(geom.position, dtype=np.float64)
    l2 = float(np.linalg.norm(pos))
    total_path = vol.l1_m + l2
    if total_path <= 0 or l2 <= 0:
        raise ValueError("zero flight path")
    t_us = vol.tof_scale.coordinate(p.channel + 0.5)
    if t_us <= 0:
        raise ValueError(f"channel {p.channel} maps to non-positive TOF {t_us}")
    lam = 1e4 * H_OVER_MN * t_us / total_path
    k = 2.0 * math.pi / lam
    p_hat = pos / l2
    q = k * (p_hat - np.array([0.0, 0.0, 1.0]))
    return replace(p, q=tuple(q))


def refine_ub(assigned: Sequence[tuple]) -> tuple:
    """Least-squares UB from (hkl, q_sample) assignments.

    Minimizes sum ||2*pi*UB*h - q||^2; closed form
    UB = (1/2*pi) * Q H^T (H H^T)^(-1) with column-stacked H and Q.
    Returns (UBMatrix, rms of residual norms).
    """
    if len(assigned) < 3:
        raise ValueError(f"need at least 3 assignments, got {len(assigned)}")
    h_mat = np.array([hkl for hkl, _ in assigned], dtype=np.float64).T
    q_mat = np.array([q for _, q in assigned], dtype=np.float64).T
    gram = h_mat @ h_mat.T
    if np.linalg.matrix_rank(gram) < 3:
        raise ValueError("hkl assignments are coplanar; UB is underdetermined")
    ub = (q_mat @ h_mat.T @ np.linalg.inv(gram)) / (2.0 * math.pi)
    residuals = 2.0 * math.pi * ub @ h_mat - q_mat
    rms = float(np.sqrt(np.mean(np.sum(residuals**2, axis=0))))
    return UBMatrix(ub), rms


def index_peaks(ub: UBMatrix, peaks: Sequence[Peak], tol: float = 0.10) -> list:
    """Assign integer hkl where round(UB^-1 q / 2*pi) is within tol."""
    inv = ub.inverse
    out = []
    for p in peaks:
        h_real = inv @ np.asarray(p.q, dtype=np.float64) / (2.0 * math.pi)
        hkl = np.rint(h_real)
        if np.max(np.abs(h_real - hkl)) < tol:
            out.append(replace(p, hkl=tuple(int(v) for v in hkl)))
        else:
            out.append(replace(p, hkl=None))
    return out


def write_peaks(peaks: Sequence[Peak], path) -> None:
    """Export a peak list as an ASCII table, one row per peak."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("# peak list; q = 2*pi*UB*h, lab frame, 1/Angstrom\n")
        f.write("# unindexed peaks carry '-' in the h k l columns\n")
        f.write("# orientation_index h k l row col channel intensity sigma qx qy qz\n")
        for p in peaks:
            hkl = p.hkl if p.hkl is not None else ("-", "-", "-")
            f.write(
                f"{p.orientation_index} {hkl[0]} {hkl[1]} {hkl[2]}"
                f" {p.row:.4f} {p.col:.4f} {p.channel:.4f}"
                f" {p.intensity:.6g} {p.sigma_intensity:.6g}"
                f" {p.q[0]:.8f} {p.q[1]:.8f} {p.q[2]:.8f}\n"
            )


def dataset_to_volume(ds, l1_m: Optional[float] = None) -> DetectorVolume:
    """Stack a dataset with row/col attributes into a detector volume.

    Every spectrum needs integer "row" and "col" attributes and all must
    share one x-scale; missing pixels are zero-filled and have no geometry.
    """
    if not ds.spectra:
        raise ValueError(f"dataset {ds.title!r} has no spectra to stack")
    xs = ds.spectra[0].xscale
    geom_map = {}
    cells = []
    for s in ds.spectra:
        r, c = s.attr("row"), s.attr("col")
        if r is None or c is None:
            raise ValueError(f"spectrum {s.id} lacks row/col attributes")
        if s.xscale != xs:
            raise ValueError(f"spectrum {s.id} is on a different x-scale")
        cells.append((int(r), int(c), s))
        if s.geometry is not None:
            geom_map[(int(r), int(c))] = s.geometry
    n_rows = max(r for r, _, _ in cells) + 1
    n_cols = max(c for _, c, _ in cells) + 1
    counts = np.zeros((n_rows, n_cols, xs.nbins), dtype=np.float32)
    for r, c, s in cells:
        counts[r, c, :] = s.counts
    if l1_m is None:
        geoms = [s.geometry for _, _, s in cells if s.geometry is not None]
        if not geoms:
            raise ValueError("no geometry on any spectrum and no l1_m given")
        l1_m = geoms[0].l1_m

    def pixel_geometry(row: int, col: int) -> DetectorGeometry:
        try:
            return geom_map[(row, col)]
        except KeyError:
            raise ValueError(f"no geometry for pixel ({row}, {col})") from None

    return DetectorVolume(
        tof_scale=xs, counts=counts, pixel_geometry=pixel_geometry, l1_m=l1_m
    )


def volume_to_dataset(vol: DetectorVolume, title: str = "volume") -> DataSet:
    """Unstack a volume into one spectrum per pixel, row-major ids.

    The inverse of dataset_to_volume: spectra carry row/col attributes and
    their pixel geometry, so the result survives a file round trip and can
    be restacked.  Every pixel must have geometry.
    """
    n_rows, n_cols, _n_ch = vol.counts.shape
    spectra = []
    for r in range(n_rows):
        for c in range(n_cols):
            spectra.append(
                new_spectrum(
                    vol.tof_scale,
                    vol.counts[r, c],
                    attrs=(Attribute("row", r), Attribute("col", c)),
                    id=r * n_cols + c,
                    label=f"px {r},{c}",
                    geometry=vol.pixel_geometry(r, c),
                )
            )
    return DataSet(title=title, x_units=XUnits.TOF_US, spectra=tuple(spectra))
