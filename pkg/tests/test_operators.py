"""Reduction transforms: focusing, unit conversion, rebin, group, normalize."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tofbench.dataset import (
    DataSet,
    DetectorGeometry,
    XUnits,
    dataset_select,
    make_explicit_xscale,
    make_uniform_xscale,
    new_spectrum,
)
from tofbench.operators import (
    H_OVER_MN,
    FocusParams,
    convert_units,
    extract_group,
    focus_factor,
    group_spectra,
    merge,
    normalize,
    rebin,
    rebin_histogram,
    relabel,
    sort_spectra,
    time_focus,
)


def test_h_over_mn_matches_codata_quotient():
    codata = 6.62607015e-34 / 1.67492749804e-27
    assert abs(H_OVER_MN - codata) / codata < 1e-6


# -- focus factor -------------------------------------------------------------


def test_focus_factor_identity():
    assert focus_factor(10.0, 0.5, 10.0, 0.5) == 1.0


def test_focus_factor_value():
    f = focus_factor(2.0, math.radians(45), 1.0, math.radians(30))
    assert f == pytest.approx(2.828427, abs=1e-6)
    assert f == pytest.approx(2.0 * math.sin(math.radians(45)) / (1.0 * 0.5))


def test_focus_factor_rejects_degenerate_angles():
    with pytest.raises(ValueError):
        focus_factor(1.0, 0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        focus_factor(1.0, 0.5, 1.0, math.pi / 2)
    with pytest.raises(ValueError):
        focus_factor(-1.0, 0.5, 1.0, 0.5)
    with pytest.raises(ValueError):
        focus_factor(1.0, 0.5, 0.0, 0.5)


def test_focus_params_validation():
    with pytest.raises(ValueError):
        FocusParams(ref_theta_rad=0.0, ref_l2_m=1.0, ref_l1_m=9.0)
    with pytest.raises(ValueError):
        FocusParams(ref_theta_rad=0.5, ref_l2_m=-1.0, ref_l1_m=9.0)


# -- time focusing ------------------------------------------------------------


def _geom(two_theta_rad: float, l2: float = 1.0, l1: float = 9.0) -> DetectorGeometry:
    return DetectorGeometry(
        position=(l2 * math.sin(two_theta_rad), 0.0, l2 * math.cos(two_theta_rad)),
        l1_m=l1,
    )


def test_time_focus_identity_at_reference():
    fp = FocusParams(ref_theta_rad=math.radians(45), ref_l2_m=1.0, ref_l1_m=9.0)
    xs = make_uniform_xscale(1000, 2000, 50)
    s = new_spectrum(xs, np.ones(50), id=0, geometry=fp.reference_geometry())
    ds = DataSet(title="t", x_units=XUnits.TOF_US, spectra=(s,))
    out = time_focus(ds, fp)
    np.testing.assert_allclose(out.spectra[0].xscale.edges, xs.edges, rtol=1e-12)
    np.testing.assert_array_equal(out.spectra[0].counts, s.counts)


def test_time_focus_halves_edges_for_double_sine():
    theta_r = math.asin(0.3)
    theta_i = math.asin(0.6)
    fp = FocusParams(ref_theta_rad=theta_r, ref_l2_m=1.0, ref_l1_m=9.0)
    xs = make_uniform_xscale(1000, 2000, 10)
    s = new_spectrum(xs, np.ones(10), id=0, geometry=_geom(2 * theta_i))
    ds = DataSet(title="t", x_units=XUnits.TOF_US, spectra=(s,))
    out = time_focus(ds, fp)
    np.testing.assert_allclose(out.spectra[0].xscale.edges, xs.edges / 2.0, rtol=1e-12)


def test_time_focus_requires_tof_and_geometry():
    fp = FocusParams(ref_theta_rad=0.5, ref_l2_m=1.0, ref_l1_m=9.0)
    xs = make_uniform_xscale(0.1, 2, 5)
    bare = new_spectrum(xs, np.ones(5), id=7)
    ds = DataSet(title="t", x_units=XUnits.TOF_US, spectra=(bare,))
    with pytest.raises(ValueError, match="7"):
        time_focus(ds, fp)
    wrong = DataSet(title="t", x_units=XUnits.DSPACING_A, spectra=())
    with pytest.raises(ValueError):
        time_focus(wrong, fp)


def _tof_us_for_d(d: float, theta_rad: float, total_path_m: float) -> float:
    # invert lambda = 1e4 * (h/mn) * t_us / L with lambda = 2 d sin(theta)
    return 2.0 * d * math.sin(theta_rad) * total_path_m / (1e4 * H_OVER_MN)


def test_focused_bank_aligns_bragg_peak():
    d_true = 1.25
    fp = FocusParams(ref_theta_rad=math.radians(45), ref_l2_m=1.5, ref_l1_m=9.0)
    spectra = []
    for i, two_theta_deg in enumerate([70, 80, 90, 100, 110]):
        g = _geom(math.radians(two_theta_deg), l2=1.5 + 0.05 * i, l1=9.0)
        t_peak = _tof_us_for_d(d_true, g.theta_rad, g.l1_m + g.l2_m)
        xs = make_uniform_xscale(t_peak * 0.5, t_peak * 1.5, 400)
        counts = np.zeros(400)
        from tofbench.dataset import bin_index

        counts[bin_index(xs, t_peak)] = 1000.0
        spectra.append(new_spectrum(xs, counts, id=i, geometry=g))
    ds = DataSet(title="bank", x_units=XUnits.TOF_US, spectra=tuple(spectra))
    focused = convert_units(time_focus(ds, fp), XUnits.DSPACING_A)
    for s in focused.spectra:
        edges = s.xscale.edges
        j = int(np.argmax(s.counts))
        center = 0.5 * (edges[j] + edges[j + 1])
        width = edges[j + 1] - edges[j]
        assert abs(center - d_true) <= width


# -- unit conversion ----------------------------------------------------------


def _single_spectrum_ds(edges, counts, geometry, units=XUnits.TOF_US) -> DataSet:
    s = new_spectrum(make_explicit_xscale(edges), counts, id=0, geometry=geometry)
    return DataSet(title="c", x_units=units, spectra=(s,))


def test_wavelength_conversion_value():
    # 20 m total path, edge at 5000 us
    g = DetectorGeometry(position=(1.0, 0.0, 0.0), l1_m=19.0)
    ds = _single_spectrum_ds([0.0, 5000.0], [1.0], g)
    out = convert_units(ds, XUnits.WAVELENGTH_A)
    assert out.x_units is XUnits.WAVELENGTH_A
    assert out.spectra[0].xscale.edges[1] == pytest.approx(0.9890085, abs=1e-7)
    assert out.spectra[0].xscale.edges[1] == pytest.approx(1e10 * H_OVER_MN * 0.005 / 20.0)


def test_dspacing_and_q_conversion_values():
    # 2theta = 90 degrees, so theta = 45
    g = DetectorGeometry(position=(1.0, 0.0, 0.0), l1_m=19.0)
    ds = _single_spectrum_ds([2500.0, 5000.0], [7.0], g)
    lam = 1e10 * H_OVER_MN * 0.005 / 20.0
    d = convert_units(ds, XUnits.DSPACING_A)
    assert d.spectra[0].xscale.edges[1] == pytest.approx(lam / (2 * math.sin(math.pi / 4)))
    assert d.spectra[0].xscale.edges[1] == pytest.approx(0.6993346, abs=1e-7)
    q = convert_units(ds, XUnits.Q_INV_A)
    assert q.spectra[0].xscale.edges[0] == pytest.approx(8.9845, abs=5e-5)
    assert q.spectra[0].xscale.edges[0] == pytest.approx(2 * math.pi / (lam / math.sqrt(2.0)))


def test_q_conversion_reverses_bins():
    g = DetectorGeometry(position=(1.0, 0.0, 0.0), l1_m=19.0)
    ds = _single_spectrum_ds([1000.0, 2000.0, 4000.0], [3.0, 9.0], g)
    out = convert_units(ds, XUnits.Q_INV_A)
    edges = out.spectra[0].xscale.edges
    assert np.all(np.diff(edges) > 0)
    np.testing.assert_array_equal(out.spectra[0].counts, [9.0, 3.0])
    assert out.spectra[0].counts.sum() == 12.0


def test_conversion_rejects_zero_time_edge_for_d_and_q():
    g = DetectorGeometry(position=(1.0, 0.0, 0.0), l1_m=19.0)
    ds = _single_spectrum_ds([0.0, 5000.0], [1.0], g)
    out = convert_units(ds, XUnits.WAVELENGTH_A)
    assert out.spectra[0].xscale.edges[0] == 0.0
    with pytest.raises(ValueError):
        convert_units(ds, XUnits.DSPACING_A)
    with pytest.raises(ValueError):
        convert_units(ds, XUnits.Q_INV_A)


def test_conversion_rejects_theta_zero_for_d_and_q():
    g = DetectorGeometry(position=(0.0, 0.0, 2.0), l1_m=18.0)  # straight through
    ds = _single_spectrum_ds([1000.0, 2000.0], [1.0], g)
    convert_units(ds, XUnits.WAVELENGTH_A)  # fine, needs only paths
    with pytest.raises(ValueError):
        convert_units(ds, XUnits.DSPACING_A)


def test_conversion_guards_source_units_and_geometry():
    g = DetectorGeometry(position=(1.0, 0.0, 0.0), l1_m=19.0)
    ds = _single_spectrum_ds([1.0, 2.0], [1.0], g, units=XUnits.DSPACING_A)
    with pytest.raises(ValueError):
        convert_units(ds, XUnits.Q_INV_A)
    bare = DataSet(
        title="b",
        x_units=XUnits.TOF_US,
        spectra=(new_spectrum(make_uniform_xscale(1, 2, 1), [1.0], id=3),),
    )
    with pytest.raises(ValueError, match="3"):
        convert_units(bare, XUnits.WAVELENGTH_A)
    with pytest.raises(ValueError):
        convert_units(bare, XUnits.TOF_US)


@given(
    nbins=st.integers(2, 60),
    t0=st.floats(100, 5000),
    span=st.floats(10, 10000),
    two_theta_deg=st.floats(5, 175),
)
def test_conversion_preserves_totals_and_monotonicity(nbins, t0, span, two_theta_deg):
    g = _geom(math.radians(two_theta_deg), l2=1.2, l1=8.8)
    xs = make_uniform_xscale(t0, t0 + span, nbins)
    counts = np.arange(nbins, dtype=np.float64)
    ds = DataSet(
        title="p",
        x_units=XUnits.TOF_US,
        spectra=(new_spectrum(xs, counts, id=0, geometry=g),),
    )
    for target in (XUnits.WAVELENGTH_A, XUnits.DSPACING_A, XUnits.Q_INV_A):
        out = convert_units(ds, target).spectra[0]
        assert out.nbins == nbins
        assert np.all(np.diff(out.xscale.edges) > 0)
        assert float(out.counts.sum()) == pytest.approx(float(counts.sum()), rel=1e-6)


# -- rebin ---------------------------------------------------------------------


def test_rebin_identity():
    xs = make_explicit_xscale([0.0, 1.0, 2.0])
    s = new_spectrum(xs, [4.0, 6.0])
    out = rebin(s, make_explicit_xscale([0.0, 1.0, 2.0]))
    assert out == s


def test_rebin_combine_two_bins():
    s = new_spectrum(make_explicit_xscale([0.0, 1.0, 2.0]), [4.0, 6.0])
    out = rebin(s, make_explicit_xscale([0.0, 2.0]))
    np.testing.assert_allclose(out.counts, [10.0])
    assert out.errors[0] == pytest.approx(3.1623, abs=1e-4)  # sqrt(4 + 6)


def test_rebin_split_bin():
    s = new_spectrum(
        make_explicit_xscale([0.0, 2.0]), [10.0], errors=[math.sqrt(10.0)]
    )
    out = rebin(s, make_explicit_xscale([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(out.counts, [5.0, 5.0])
    np.testing.assert_allclose(out.errors, [2.2360680, 2.2360680], rtol=1e-6)


def test_rebin_drops_counts_outside_new_range():
    s = new_spectrum(make_explicit_xscale([0.0, 1.0, 2.0, 3.0]), [4.0, 6.0, 8.0])
    out = rebin(s, make_explicit_xscale([1.0, 2.0]))
    np.testing.assert_allclose(out.counts, [6.0])


def test_rebin_partial_overlap():
    s = new_spectrum(make_explicit_xscale([0.0, 1.0]), [8.0])
    out = rebin(s, make_explicit_xscale([0.5, 1.5]))
    np.testing.assert_allclose(out.counts, [4.0])


@st.composite
def _histograms(draw):
    nbins = draw(st.integers(1, 80))
    start = draw(st.floats(-100, 100))
    width = draw(st.floats(0.1, 500))
    counts = draw(
        st.lists(st.floats(0, 1e6), min_size=nbins, max_size=nbins)
    )
    return np.linspace(start, start + width, nbins + 1), np.asarray(counts)


@given(_histograms(), st.integers(1, 97))
def test_rebin_core_conserves_total_when_covering(hist, new_nbins):
    old_edges, counts = hist
    new_edges = np.linspace(old_edges[0] - 1.0, old_edges[-1] + 1.0, new_nbins + 1)
    out = rebin_histogram(old_edges, counts, new_edges)
    assert out.sum() == pytest.approx(counts.sum(), rel=1e-9, abs=1e-9)


def _refine_edges(edges: np.ndarray, factor: int) -> np.ndarray:
    """Subdivide each bin `factor` times, keeping the original edges exact."""
    left = edges[:-1]
    widths = np.diff(edges)
    sub = left[:, None] + widths[:, None] * (np.arange(factor) / factor)
    return np.append(sub.ravel(), edges[-1])


@given(_histograms(), st.integers(2, 7))
def test_rebin_core_split_then_recombine_is_exact(hist, factor):
    old_edges, counts = hist
    fine_edges = _refine_edges(old_edges, factor)
    fine = rebin_histogram(old_edges, counts, fine_edges)
    back = rebin_histogram(fine_edges, fine, old_edges)
    np.testing.assert_allclose(back, counts, rtol=1e-9, atol=1e-9)


def test_rebin_spectrum_split_recombine_round_trip():
    xs = make_uniform_xscale(0, 100, 20)
    rng = np.random.default_rng(7)
    s = new_spectrum(xs, rng.integers(0, 1000, 20).astype(float))
    fine = rebin(s, make_uniform_xscale(0, 100, 100))
    back = rebin(fine, xs)
    np.testing.assert_allclose(back.counts, s.counts, rtol=1e-5)
    np.testing.assert_allclose(back.errors, s.errors, rtol=1e-5)


# -- grouping ------------------------------------------------------------------


def _bank(n: int = 6, nbins: int = 8) -> DataSet:
    xs = make_uniform_xscale(0, 8, nbins)
    rng = np.random.default_rng(42)
    spectra = tuple(
        new_spectrum(
            xs,
            rng.integers(1, 100, nbins).astype(float),
            id=i,
            geometry=_geom(math.radians(60 + i)),
        )
        for i in range(n)
    )
    return DataSet(title="bank", x_units=XUnits.TOF_US, spectra=spectra)


def test_group_identity():
    ds = _bank()
    out = group_spectra(ds, {s.id: s.id for s in ds.spectra})
    # identity grouping: everything survives except that group ids are rewritten
    assert len(out) == len(ds)
    for a, b in zip(out.spectra, ds.spectra):
        assert a.id == b.id
        assert a.group_id == b.id
        assert a.xscale == b.xscale
        assert a.geometry == b.geometry
        np.testing.assert_array_equal(a.counts, b.counts)
        np.testing.assert_array_equal(a.errors, b.errors)


def test_group_two_identical_spectra():
    xs = make_uniform_xscale(0, 4, 4)
    a = new_spectrum(xs, [4.0, 9.0, 16.0, 25.0], id=0)
    b = new_spectrum(xs, [4.0, 9.0, 16.0, 25.0], id=1)
    ds = DataSet(title="two", x_units=XUnits.TOF_US, spectra=(a, b))
    out = group_spectra(ds, {0: 0, 1: 0})
    assert len(out) == 1
    np.testing.assert_allclose(out.spectra[0].counts, [8.0, 18.0, 32.0, 50.0])
    np.testing.assert_allclose(
        out.spectra[0].errors, np.sqrt(2.0) * a.errors, rtol=1e-6
    )


def test_group_160_into_4_banks_conserves_counts():
    xs = make_uniform_xscale(0, 50, 50)
    rng = np.random.default_rng(3)
    spectra = tuple(
        new_spectrum(xs, rng.integers(0, 500, 50).astype(float), id=i)
        for i in range(160)
    )
    ds = DataSet(title="r", x_units=XUnits.TOF_US, spectra=spectra)
    out = group_spectra(ds, {i: i % 4 for i in range(160)})
    assert len(out) == 4
    total_in = sum(float(s.counts.sum()) for s in ds.spectra)
    total_out = sum(float(s.counts.sum()) for s in out.spectra)
    assert total_out == pytest.approx(total_in, rel=1e-6)


def test_group_rebins_mixed_scales_and_conserves():
    a = new_spectrum(make_uniform_xscale(0, 10, 10), np.full(10, 5.0), id=0)
    b = new_spectrum(make_uniform_xscale(0, 10, 20), np.full(20, 2.0), id=1)
    ds = DataSet(title="mix", x_units=XUnits.TOF_US, spectra=(a, b))
    out = group_spectra(ds, {0: 9, 1: 9})
    assert out.spectra[0].id == 9
    assert out.spectra[0].nbins == 10  # first member's scale wins
    assert float(out.spectra[0].counts.sum()) == pytest.approx(50.0 + 40.0, rel=1e-6)


def test_group_missing_id_rejected():
    ds = _bank(3)
    with pytest.raises(KeyError, match="2"):
        group_spectra(ds, {0: 0, 1: 0})


# -- normalize ------------------------------------------------------------------


def test_normalize_scalar():
    xs = make_uniform_xscale(0, 2, 2)
    s = new_spectrum(xs, [4.0, 8.0], errors=[2.0, 2.83])
    ds = DataSet(title="n", x_units=XUnits.TOF_US, spectra=(s,))
    out = normalize(ds, scalar=2.0)
    np.testing.assert_allclose(out.spectra[0].counts, [2.0, 4.0])
    np.testing.assert_allclose(out.spectra[0].errors, [1.0, 1.415], rtol=1e-6)
    assert out.spectra[0].attr("normalized_by") == "scalar:2.0"


def test_normalize_scalar_one_keeps_values():
    ds = _bank(2)
    out = normalize(ds, scalar=1.0)
    for before, after in zip(ds.spectra, out.spectra):
        np.testing.assert_array_equal(before.counts, after.counts)
        np.testing.assert_array_equal(before.errors, after.errors)


def test_normalize_monitor_divides_by_total():
    xs = make_uniform_xscale(0, 4, 4)
    mon = new_spectrum(xs, np.full(4, 2.5e5), id=99)  # total 1e6
    s = new_spectrum(xs, [1e6, 2e6, 3e6, 4e6], id=0)
    ds = DataSet(title="n", x_units=XUnits.TOF_US, spectra=(s,))
    out = normalize(ds, monitor=mon)
    np.testing.assert_allclose(out.spectra[0].counts, [1.0, 2.0, 3.0, 4.0])
    assert out.spectra[0].attr("normalized_by") == "monitor:1000000.0"


def test_normalize_round_trip_scalar():
    ds = _bank(3)
    out = normalize(normalize(ds, scalar=7.0), scalar=1.0 / 7.0)
    for before, after in zip(ds.spectra, out.spectra):
        np.testing.assert_allclose(after.counts, before.counts, rtol=1e-6)


def test_normalize_mode_validation():
    ds = _bank(1)
    with pytest.raises(ValueError):
        normalize(ds)
    with pytest.raises(ValueError):
        normalize(ds, scalar=1.0, time_s=30.0)
    with pytest.raises(ValueError):
        normalize(ds, scalar=0.0)
    with pytest.raises(ValueError):
        normalize(ds, time_s=-3.0)
    zero_mon = new_spectrum(make_uniform_xscale(0, 2, 2), [0.0, 0.0])
    with pytest.raises(ValueError):
        normalize(ds, monitor=zero_mon)


def test_normalize_time_stamps_attribute():
    ds = _bank(1)
    out = normalize(ds, time_s=30.0)
    assert out.spectra[0].attr("normalized_by") == "time:30.0"


# -- merge ----------------------------------------------------------------------


def test_merge_with_empty_adopts_other():
    empty = DataSet(title="", x_units=XUnits.TOF_US)
    ds = _bank(3)
    out = merge(empty, ds)
    assert out.ids == (0, 1, 2)
    assert out.title == ds.title
    assert out.x_units == ds.x_units
    for a, b in zip(out.spectra, ds.spectra):
        np.testing.assert_array_equal(a.counts, b.counts)


def test_merge_empty_with_different_units_adopts():
    empty = DataSet(title="", x_units=XUnits.TOF_US)
    ds = DataSet(
        title="d",
        x_units=XUnits.DSPACING_A,
        spectra=(new_spectrum(make_uniform_xscale(0.5, 3, 5), np.ones(5), id=4),),
    )
    out = merge(empty, ds)
    assert out.x_units is XUnits.DSPACING_A


def test_merge_concatenates_and_renumbers():
    a = _bank(2)
    b = _bank(3)
    out = merge(a, b)
    assert out.ids == (0, 1, 2, 3, 4)
    assert len(out) == 5
    prefix = dataset_select(out, [0, 1])
    for left, right in zip(prefix.spectra, a.spectra):
        np.testing.assert_array_equal(left.counts, right.counts)


def test_merge_unit_mismatch_names_both():
    a = _bank(1)
    b = DataSet(
        title="d",
        x_units=XUnits.DSPACING_A,
        spectra=(new_spectrum(make_uniform_xscale(0.5, 3, 5), np.ones(5), id=0),),
    )
    with pytest.raises(ValueError, match="tof_us.*dspacing_A"):
        merge(a, b)


def test_merge_fold_of_120_single_spectrum_datasets():
    xs = make_uniform_xscale(0, 10, 10)
    result = DataSet(title="", x_units=XUnits.TOF_US)
    for i in range(120):
        one = DataSet(
            title="", x_units=XUnits.TOF_US,
            spectra=(new_spectrum(xs, np.full(10, float(i)), id=0),),
        )
        result = merge(result, one)
    assert len(result) == 120
    assert result.ids == tuple(range(120))
    assert result.spectra[119].counts[0] == 119.0


# -- relabel / extract / sort ----------------------------------------------------


def _run_like() -> DataSet:
    from tofbench.dataset import Attribute

    xs = make_uniform_xscale(0, 4, 4)
    spectra = tuple(
        new_spectrum(
            xs,
            np.ones(4),
            id=i,
            attrs=(
                Attribute("run_number", 8712),
                Attribute("start_time", 1020300000),
                Attribute("bank_angle_deg", float((i % 2 + 1) * 90)),
            ),
        )
        for i in range(4)
    )
    return DataSet(title="run 8712", x_units=XUnits.TOF_US, spectra=spectra)


def test_relabel_with_run_and_time():
    out = relabel(_run_like(), "{run_number} {start_time}")
    assert all(s.label == "8712 1020300000" for s in out.spectra)


def test_relabel_fixed_text():
    out = relabel(_run_like(), "fixed")
    assert all(s.label == "fixed" for s in out.spectra)


def test_relabel_unknown_placeholder():
    with pytest.raises(ValueError, match="bogus"):
        relabel(_run_like(), "{bogus}")


def test_relabel_id_placeholder_and_dataset_fallback():
    from tofbench.dataset import Attribute

    xs = make_uniform_xscale(0, 2, 2)
    ds = DataSet(
        title="r",
        x_units=XUnits.TOF_US,
        spectra=(new_spectrum(xs, np.ones(2), id=5),),
        attributes=(Attribute("run_number", 77),),
    )
    out = relabel(ds, "{run_number}:{id}")
    assert out.spectra[0].label == "77:5"


def test_relabel_missing_attribute_names_spectrum():
    xs = make_uniform_xscale(0, 2, 2)
    ds = DataSet(
        title="r", x_units=XUnits.TOF_US, spectra=(new_spectrum(xs, np.ones(2), id=5),)
    )
    with pytest.raises(ValueError, match="5"):
        relabel(ds, "{run_number}")


def test_extract_group_by_bank_angle():
    ds = _run_like()
    out = extract_group(ds, "bank_angle_deg", 90)
    assert out.ids == (0, 2)
    assert all(s.attr("bank_angle_deg") == 90.0 for s in out.spectra)


def test_extract_group_absent_key_gives_empty():
    ds = _run_like()
    out = extract_group(ds, "no_such_key", 1)
    assert len(out) == 0


def test_extract_group_matching_all_is_identity():
    ds = _run_like()
    out = extract_group(ds, "run_number", 8712)
    assert out == ds


def test_sort_by_id_identity():
    ds = _bank(4)
    assert sort_spectra(ds, "id") == ds


def test_sort_by_theta():
    xs = make_uniform_xscale(0, 2, 2)
    spectra = tuple(
        new_spectrum(xs, np.ones(2), id=i, geometry=_geom(math.radians(deg)))
        for i, deg in enumerate([30, 10, 20])
    )
    ds = DataSet(title="s", x_units=XUnits.TOF_US, spectra=spectra)
    out = sort_spectra(ds, "theta")
    assert out.ids == (1, 2, 0)
    desc = sort_spectra(ds, "theta", ascending=False)
    assert desc.ids == (0, 2, 1)


def test_sort_missing_key_names_spectrum():
    xs = make_uniform_xscale(0, 2, 2)
    from tofbench.dataset import Attribute

    labeled = new_spectrum(xs, np.ones(2), id=0, attrs=(Attribute("label", "a"),))
    bare = new_spectrum(xs, np.ones(2), id=1)
    ds = DataSet(title="s", x_units=XUnits.TOF_US, spectra=(labeled, bare))
    with pytest.raises(ValueError, match="1"):
        sort_spectra(ds, "label")


def test_sort_is_stable_on_ties():
    from tofbench.dataset import Attribute

    xs = make_uniform_xscale(0, 2, 2)
    spectra = tuple(
        new_spectrum(xs, np.ones(2), id=i, attrs=(Attribute("run_number", 1),))
        for i in range(5)
    )
    ds = DataSet(title="s", x_units=XUnits.TOF_US, spectra=spectra)
    assert sort_spectra(ds, "run_number").ids == (0, 1, 2, 3, 4)
