"""Synthetic instrument data for tests, benchmarks and the `gen` command.

Two families live here:
  - powder-style run files (monitor + detector bank + per-bank sums), used
    by the batch-reduction pipeline and the file servers;
  - single-crystal detector volumes with known UB, used by the peak-finding
    and indexing pipeline.

Everything is seeded and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dataset import (
    Attribute,
    DataSet,
    DetectorGeometry,
    Spectrum,
    UniformXScale,
    XScale,
    XUnits,
    make_uniform_xscale,
    new_spectrum,
)
from .operators import H_OVER_MN
from .peaks import (
    DetectorVolume,
    GoniometerSetting,
    UBMatrix,
    goniometer_matrix,
)
from .retrievers import Run

__all__ = [
    "FlatPanel",
    "Reflection",
    "SCDCase",
    "cubic_ub",
    "reflection_list",
    "select_separated",
    "perturb_reflections",
    "scd_volume",
    "scd_case",
    "well_conditioned_subset",
    "powder_run",
    "flat_run",
]


def cubic_ub(a: float) -> UBMatrix:
    """UB for an unrotated cubic lattice of edge a (Angstrom)."""
    if a <= 0:
        raise ValueError(f"lattice parameter must be > 0, got {a}")
    return UBMatrix(np.eye(3) / a)


@dataclass(frozen=True)
class FlatPanel:
    """Square-pixel area detector, centered on a scattering angle in the
    horizontal (x-z) plane, pixels indexed [row][col]."""

    n_rows: int = 64
    n_cols: int = 64
    pitch_m: float = 0.003
    distance_m: float = 0.45
    two_theta_deg: float = 75.0
    l1_m: float = 9.0

    def _basis(self):
        tt = math.radians(self.two_theta_deg)
        normal = np.array([math.sin(tt), 0.0, math.cos(tt)])
        u_hat = np.array([math.cos(tt), 0.0, -math.sin(tt)])
        v_hat = np.array([0.0, 1.0, 0.0])
        return normal, u_hat, v_hat

    def pixel_position(self, row: float, col: float) -> np.ndarray:
        normal, u_hat, v_hat = self._basis()
        du = (col - (self.n_cols - 1) / 2.0) * self.pitch_m
        dv = (row - (self.n_rows - 1) / 2.0) * self.pitch_m
        return self.distance_m * normal + du * u_hat + dv * v_hat

    def pixel_geometry(self, row: int, col: int) -> DetectorGeometry:
        pos = self.pixel_position(row, col)
        return DetectorGeometry(
            position=(float(pos[0]), float(pos[1]), float(pos[2])),
            l1_m=self.l1_m,
            solid_angle_sr=self.pitch_m**2 / self.distance_m**2,
        )


class Reflection(NamedTuple):
    hkl: tuple
    q_lab: tuple
    row: float
    col: float
    channel: float


def _fractional_channel(xscale: XScale, x: float) -> float:
    edges = np.asarray(xscale.edges, dtype=np.float64)
    i = int(np.searchsorted(edges, x, side="right")) - 1
    if i < 0 or i >= xscale.nbins:
        return float("nan")
    return i + (x - edges[i]) / (edges[i + 1] - edges[i]) - 0.5


def _place_q(
    q_lab: np.ndarray, panel: FlatPanel, tof_scale: XScale, margin: float
) -> Optional[tuple]:
    """Map a lab-frame q onto (row, col, channel), or None if it misses.

    Elastic scattering fixes the wavenumber: q = k*(p_hat - z_hat) implies
    k = -|q|^2 / (2*q_z), valid only for q_z < 0.
    """
    q = np.asarray(q_lab, dtype=np.float64)
    q_sq = float(q @ q)
    if q_sq == 0.0 or q[2] >= 0.0:
        return None
    k = -q_sq / (2.0 * q[2])
    p_hat = q / k + np.array([0.0, 0.0, 1.0])
    normal, u_hat, v_hat = panel._basis()
    along = float(p_hat @ normal)
    if along <= 0.0:
        return None
    ray = (panel.distance_m / along) * p_hat
    offset = ray - panel.distance_m * normal
    col = float(offset @ u_hat) / panel.pitch_m + (panel.n_cols - 1) / 2.0
    row = float(offset @ v_hat) / panel.pitch_m + (panel.n_rows - 1) / 2.0
    if not (margin <= row <= panel.n_rows - 1 - margin):
        return None
    if not (margin <= col <= panel.n_cols - 1 - margin):
        return None
    lam = 2.0 * math.pi / k
    path = panel.l1_m + float(np.linalg.norm(ray))
    t_us = lam * path / (1e4 * H_OVER_MN)
    channel = _fractional_channel(tof_scale, t_us)
    if not (margin <= channel <= tof_scale.nbins - 1 - margin):
        return None
    return row, col, channel


def reflection_list(
    ub: UBMatrix,
    gonio: GoniometerSetting,
    panel: FlatPanel,
    tof_scale: XScale,
    hmax: int = 6,
    margin: float = 5.0,
) -> list:
    """All integer reflections |h|,|k|,|l| <= hmax that land on the panel."""
    rot = goniometer_matrix(gonio)
    out = []
    rng = range(-hmax, hmax + 1)
    for h in rng:
        for k in rng:
            for l in rng:
                if h == 0 and k == 0 and l == 0:
                    continue
                q_sample = 2.0 * math.pi * ub.m @ np.array([h, k, l], dtype=np.float64)
                q_lab = rot @ q_sample
                placed = _place_q(q_lab, panel, tof_scale, margin)
                if placed is None:
                    continue
                out.append(
                    Reflection(
                        hkl=(h, k, l),
                        q_lab=tuple(q_lab),
                        row=placed[0],
                        col=placed[1],
                        channel=placed[2],
                    )
                )
    return out


def select_separated(
    reflections: Sequence[Reflection],
    n: int,
    min_voxel_sep: float,
    rng: np.random.Generator,
) -> list:
    """Randomly pick n reflections pairwise farther apart than min_voxel_sep
    (Chebyshev distance in voxel coordinates)."""
    pool = list(reflections)
    order = rng.permutation(len(pool))
    chosen: list = []
    for idx in order:
        cand = pool[idx]
        ok = all(
            max(
                abs(cand.row - c.row),
                abs(cand.col - c.col),
                abs(cand.channel - c.channel),
            )
            > min_voxel_sep
            for c in chosen
        )
        if ok:
            chosen.append(cand)
            if len(chosen) >= n:
                return chosen
    raise ValueError(
        f"only {len(chosen)} of {n} reflections satisfy separation"
        f" {min_voxel_sep}; enlarge the panel or lower n"
    )


def perturb_reflections(
    reflections: Sequence[Reflection],
    sigma: float,
    rng: np.random.Generator,
    panel: FlatPanel,
    tof_scale: XScale,
    margin: float = 5.0,
) -> list:
    """Gaussian-perturb each q by sigma (1/Angstrom) per component and
    re-project onto the detector.  Reflections knocked off the panel are
    dropped."""
    out = []
    for refl in reflections:
        q = np.asarray(refl.q_lab, dtype=np.float64)
        q_noisy = q + rng.normal(0.0, sigma, size=3)
        placed = _place_q(q_noisy, panel, tof_scale, margin)
        if placed is None:
            continue
        out.append(
            Reflection(
                hkl=refl.hkl,
                q_lab=tuple(q_noisy),
                row=placed[0],
                col=placed[1],
                channel=placed[2],
            )
        )
    return out


def scd_volume(
    panel: FlatPanel,
    tof_scale: XScale,
    reflections: Sequence[Reflection],
    amplitudes=1000.0,
    sigma_vox: float = 0.8,
    background: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> DetectorVolume:
    """Render reflections as Gaussian blobs into a detector volume.

    amplitudes is a scalar or one value per reflection.  With an rng the
    blob-plus-background rate is Poisson sampled; without, the exact rate
    is stored, which keeps unit tests deterministic down to the last bit.
    """
    rate = np.zeros((panel.n_rows, panel.n_cols, tof_scale.nbins), dtype=np.float64)
    amp = np.broadcast_to(np.asarray(amplitudes, dtype=np.float64), (len(reflections),))
    reach = int(math.ceil(4.0 * sigma_vox))
    for refl, a in zip(reflections, amp):
        r0 = int(round(refl.row))
        c0 = int(round(refl.col))
        ch0 = int(round(refl.channel))
        rs = slice(max(r0 - reach, 0), min(r0 + reach + 1, panel.n_rows))
        cs = slice(max(c0 - reach, 0), min(c0 + reach + 1, panel.n_cols))
        chs = slice(max(ch0 - reach, 0), min(ch0 + reach + 1, tof_scale.nbins))
        rr, cc, chch = np.meshgrid(
            np.arange(rs.start, rs.stop, dtype=np.float64),
            np.arange(cs.start, cs.stop, dtype=np.float64),
            np.arange(chs.start, chs.stop, dtype=np.float64),
            indexing="ij",
        )
        d_sq = (rr - refl.row) ** 2 + (cc - refl.col) ** 2 + (chch - refl.channel) ** 2
        rate[rs, cs, chs] += a * np.exp(-d_sq / (2.0 * sigma_vox**2))
    rate += background
    counts = rng.poisson(rate) if rng is not None else rate
    return DetectorVolume(
        tof_scale=tof_scale,
        counts=counts.astype(np.float32),
        pixel_geometry=panel.pixel_geometry,
        l1_m=panel.l1_m,
    )


def well_conditioned_subset(hkls: Sequence[tuple], n: int = 5) -> list:
    """Indices of n hkl rows chosen greedily to maximize det(H H^T).

    A small, well-spread assignment set keeps the least-squares UB fit
    stable; picking by intensity or |h| alone can be nearly coplanar.
    """
    if len(hkls) < n:
        raise ValueError(f"need at least {n} reflections, got {len(hkls)}")
    h_arr = np.array(hkls, dtype=np.float64)
    best_det, chosen = -1.0, None
    from itertools import combinations

    for trip in combinations(range(len(hkls)), 3):
        d = abs(np.linalg.det(h_arr[list(trip)].T))
        if d > best_det:
            best_det, chosen = d, list(trip)
    for _ in range(n - 3):
        bd, bi = -1.0, None
        for i in range(len(hkls)):
            if i in chosen:
                continue
            sub = h_arr[chosen + [i]].T
            d = float(np.linalg.det(sub @ sub.T))
            if d > bd:
                bd, bi = d, i
        chosen.append(bi)
    return chosen


@dataclass(frozen=True)
class SCDCase:
    """A complete synthetic single-crystal measurement with ground truth."""

    panel: FlatPanel
    tof_scale: XScale
    gonio: GoniometerSetting
    ub: UBMatrix
    exact: tuple
    reflections: tuple
    volume: DetectorVolume


def scd_case(
    seed: int,
    n_reflections: int = 50,
    q_noise: float = 0.01,
    a_lattice: float = 4.0,
) -> SCDCase:
    """Build the standard single-crystal test case.

    A wide flat panel (scattering angles roughly 25 to 145 degrees) sees
    n_reflections well-separated reflections of a cubic crystal.  Each
    reflection's q is perturbed by an isotropic Gaussian of q_noise (in
    1/Angstrom) before being projected back onto the detector, and the
    volume is Poisson sampled on top of a flat background.
    """
    panel = FlatPanel(
        n_rows=256,
        n_cols=256,
        pitch_m=0.003,
        distance_m=0.22,
        two_theta_deg=85.0,
        l1_m=9.0,
    )
    ub = cubic_ub(a_lattice)
    gonio = GoniometerSetting(chi=0.3, phi=0.5, omega=0.2)
    tof_scale = make_uniform_xscale(400.0, 20400.0, 500)
    pool = reflection_list(ub, gonio, panel, tof_scale, hmax=10, margin=8.0)
    rng = np.random.default_rng(seed)
    exact = select_separated(pool, n_reflections, 8.0, rng)
    if q_noise > 0.0:
        noisy = []
        for r in exact:
            q = np.asarray(r.q_lab) + rng.normal(0.0, q_noise, size=3)
            placed = _place_q(q, panel, tof_scale, margin=5.0)
            if placed is None:
                continue
            noisy.append(Reflection(r.hkl, tuple(q), *placed))
    else:
        noisy = list(exact)
    amps = rng.uniform(300.0, 3000.0, size=len(noisy))
    volume = scd_volume(
        panel, tof_scale, noisy, amplitudes=amps, sigma_vox=0.8,
        background=0.5, rng=rng,
    )
    return SCDCase(
        panel=panel,
        tof_scale=tof_scale,
        gonio=gonio,
        ub=ub,
        exact=tuple(exact),
        reflections=tuple(noisy),
        volume=volume,
    )


BANK_ANGLES_DEG = (30.0, 60.0, 90.0, 144.0)


def _powder_template(
    xscale: UniformXScale, two_theta_deg: float, l1_m: float, l2_m: float
) -> np.ndarray:
    """Expected count rate per bin: smooth background plus Bragg-like lines
    at fixed d-spacings, positioned in TOF by the pixel's flight path."""
    centers = np.array(
        [xscale.coordinate(i + 0.5) for i in range(xscale.nbins)], dtype=np.float64
    )
    theta = math.radians(two_theta_deg) / 2.0
    path = l1_m + l2_m
    lam_per_us = 1e4 * H_OVER_MN / path
    d_lines = (0.8, 1.1, 1.6, 2.03, 2.9)
    rate = 4.0 + 2.0 * np.exp(-(((centers - centers[0]) / (centers[-1] - centers[0]) - 0.4) ** 2) / 0.08)
    for d in d_lines:
        t_line = 2.0 * d * math.sin(theta) / lam_per_us
        rate += 120.0 * np.exp(-((centers - t_line) ** 2) / (2.0 * (8.0 * (centers[1] - centers[0])) ** 2))
    return rate


def powder_run(
    run_number: int,
    start_time: int,
    seed: int,
    n_detectors: int = 160,
    n_bins: int = 5000,
    instrument: str = "synth-powder",
) -> Run:
    """One synthetic powder run: monitor, detector bank, per-bank sums.

    Detectors split evenly over the four bank angles; each bank also gets a
    summed spectrum tagged with bank_angle_deg so a reduction can pull one
    spectrum per run.
    """
    if n_detectors % len(BANK_ANGLES_DEG) != 0:
        raise ValueError(
            f"n_detectors ({n_detectors}) must divide evenly into"
            f" {len(BANK_ANGLES_DEG)} banks"
        )
    rng = np.random.default_rng(seed)
    xscale = make_uniform_xscale(1000.0, 21000.0, n_bins)
    l1_m = 20.0
    per_bank = n_detectors // len(BANK_ANGLES_DEG)
    run_attrs = (
        Attribute("run_number", run_number),
        Attribute("start_time", start_time),
    )

    monitor_rate = 200.0 * np.ones(n_bins)
    monitor_counts = rng.poisson(monitor_rate).astype(np.float32)
    monitor = DataSet(
        title="monitor",
        x_units=XUnits.TOF_US,
        spectra=(
            new_spectrum(
                xscale,
                monitor_counts,
                attrs=(Attribute("monitor", 1),),
                id=0,
                label="beam monitor",
            ),
        ),
        attributes=run_attrs,
    )

    det_spectra = []
    bank_spectra = []
    sid = 0
    for bank_idx, angle in enumerate(BANK_ANGLES_DEG):
        l2_m = 1.5
        rate = _powder_template(xscale, angle, l1_m, l2_m)
        bank_counts = np.zeros(n_bins, dtype=np.float64)
        tt = math.radians(angle)
        for j in range(per_bank):
            counts = rng.poisson(rate).astype(np.float32)
            bank_counts += counts
            # spread detectors a little along y so positions stay distinct
            y = (j - (per_bank - 1) / 2.0) * 0.01
            pos = (l2_m * math.sin(tt), y, l2_m * math.cos(tt))
            det_spectra.append(
                new_spectrum(
                    xscale,
                    counts,
                    id=sid,
                    group_id=bank_idx,
                    label=f"det {sid}",
                    geometry=DetectorGeometry(position=pos, l1_m=l1_m),
                )
            )
            sid += 1
        bank_spectra.append(
            new_spectrum(
                xscale,
                bank_counts.astype(np.float32),
                attrs=(Attribute("bank_angle_deg", angle),),
                id=bank_idx,
                group_id=bank_idx,
                label=f"bank {angle:g}",
                geometry=DetectorGeometry(
                    position=(l2_m * math.sin(tt), 0.0, l2_m * math.cos(tt)),
                    l1_m=l1_m,
                ),
            )
        )

    detectors = DataSet(
        title="detectors",
        x_units=XUnits.TOF_US,
        spectra=tuple(det_spectra),
        attributes=run_attrs,
    )
    banks = DataSet(
        title="banks",
        x_units=XUnits.TOF_US,
        spectra=tuple(bank_spectra),
        attributes=run_attrs,
    )
    return Run(
        instrument=instrument,
        run_number=run_number,
        start_time=start_time,
        datasets=(monitor, detectors, banks),
    )


def flat_run(
    n_spectra: int,
    n_bins: int,
    seed: int = 0,
    run_number: int = 1,
    start_time: int = 0,
    instrument: str = "synth-flat",
) -> Run:
    """A single large dataset of flat-ish spectra, for size and IO stress."""
    rng = np.random.default_rng(seed)
    xscale = make_uniform_xscale(0.0, 10000.0, n_bins)
    base = rng.poisson(10.0, size=(n_spectra, n_bins)).astype(np.float32)
    spectra = tuple(
        new_spectrum(
            xscale,
            base[i],
            attrs=(Attribute("row", i // 100), Attribute("col", i % 100)),
            id=i,
            label=f"px {i}",
        )
        for i in range(n_spectra)
    )
    ds = DataSet(
        title="pixels",
        x_units=XUnits.TOF_US,
        spectra=spectra,
        attributes=(
            Attribute("run_number", run_number),
            Attribute("start_time", start_time),
        ),
    )
    return Run(
        instrument=instrument,
        run_number=run_number,
        start_time=start_time,
        datasets=(ds,),
    )
