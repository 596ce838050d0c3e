"""Hierarchical JSON export: a logical entry/instrument/data tree.

The document mirrors the run structure:

    {"entry": {"instrument": ..., "run_number": ..., "start_time": ...,
               "data": [dataset groups]}}

Dataset groups carry the full data model; counts and errors are
base64-encoded little-endian f32 arrays, explicit edges base64 f64, so the
round trip is bit-exact.  Schema violations are reported with the JSON path
of the offending node.
"""

from __future__ import annotations

import base64
import json
from typing import Optional

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
from .runfile import Run

__all__ = ["SchemaError", "write_hierarchical", "read_hierarchical"]


class SchemaError(ValueError):
    """Document does not match the expected tree; message names the JSON path."""


def _b64_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def _b64_f64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _attrs_to_json(attrs) -> list:
    return [[a.name, list(a.value) if isinstance(a.value, tuple) else a.value] for a in attrs]


def _xscale_to_json(xs: XScale) -> dict:
    if isinstance(xs, UniformXScale):
        return {"kind": "uniform", "start": xs.start, "end": xs.end, "nbins": xs.nbins}
    return {"kind": "explicit", "edges": _b64_f64(xs.edges)}


def _spectrum_to_json(s: Spectrum) -> dict:
    geometry = None
    if s.geometry is not None:
        g = s.geometry
        geometry = {
            "position": list(g.position),
            "l1_m": g.l1_m,
            "solid_angle_sr": g.solid_angle_sr,
            "efficiency": g.efficiency,
        }
    return {
        "id": s.id,
        "group_id": s.group_id,
        "label": s.label,
        "geometry": geometry,
        "attributes": _attrs_to_json(s.attributes),
        "xscale": _xscale_to_json(s.xscale),
        "counts": _b64_f32(s.counts),
        "errors": _b64_f32(s.errors),
    }


def write_hierarchical(run: Run, path) -> None:
    doc = {
        "entry": {
            "instrument": run.instrument,
            "run_number": run.run_number,
            "start_time": run.start_time,
            "data": [
                {
                    "title": ds.title,
                    "x_units": ds.x_units.value,
                    "y_units": ds.y_units,
                    "attributes": _attrs_to_json(ds.attributes),
                    "spectra": [_spectrum_to_json(s) for s in ds.spectra],
                }
                for ds in run.datasets
            ],
        }
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def _need(obj: dict, key: str, kind, path: str):
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected an object")
    if key not in obj:
        raise SchemaError(f"{path}.{key}: missing")
    v = obj[key]
    if kind is float:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise SchemaError(f"{path}.{key}: expected a number")
        return float(v)
    if not isinstance(v, kind) or (kind is int and isinstance(v, bool)):
        raise SchemaError(f"{path}.{key}: expected {kind.__name__}")
    return v


def _decode_b64(s: str, dtype: str, path: str) -> np.ndarray:
    try:
        raw = base64.b64decode(s, validate=True)
    except Exception as e:
        raise SchemaError(f"{path}: invalid base64: {e}") from e
    itemsize = np.dtype(dtype).itemsize
    if len(raw) % itemsize:
        raise SchemaError(f"{path}: byte length {len(raw)} not a multiple of {itemsize}")
    return np.frombuffer(raw, dtype=dtype)


def _xscale_from_json(spec, path: str) -> XScale:
    kind = _need(spec, "kind", str, path)
    if kind == "uniform":
        return UniformXScale(
            _need(spec, "start", float, path),
            _need(spec, "end", float, path),
            _need(spec, "nbins", int, path),
        )
    if kind == "explicit":
        edges = _decode_b64(_need(spec, "edges", str, path), "<f8", f"{path}.edges")
        return ExplicitXScale(edges)
    raise SchemaError(f"{path}.kind: unknown x-scale kind {kind!r}")


def _attrs_from_json(data, path: str) -> tuple:
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a list")
    out = []
    for i, pair in enumerate(data):
        if not isinstance(pair, list) or len(pair) != 2 or not isinstance(pair[0], str):
            raise SchemaError(f"{path}[{i}]: expected a [name, value] pair")
        value = tuple(pair[1]) if isinstance(pair[1], list) else pair[1]
        try:
            out.append(Attribute(pair[0], value))
        except (TypeError, ValueError) as e:
            raise SchemaError(f"{path}[{i}]: {e}") from e
    return tuple(out)


def _geometry_from_json(data, path: str) -> Optional[DetectorGeometry]:
    if data is None:
        return None
    pos = _need(data, "position", list, path)
    if len(pos) != 3:
        raise SchemaError(f"{path}.position: expected 3 elements")
    return DetectorGeometry(
        position=tuple(pos),
        l1_m=_need(data, "l1_m", float, path),
        solid_angle_sr=float(data.get("solid_angle_sr", 0.0)),
        efficiency=float(data.get("efficiency", 1.0)),
    )


def _spectrum_from_json(spec, path: str) -> Spectrum:
    xscale = _xscale_from_json(_need(spec, "xscale", dict, path), f"{path}.xscale")
    counts = _decode_b64(_need(spec, "counts", str, path), "<f4", f"{path}.counts")
    errors = _decode_b64(_need(spec, "errors", str, path), "<f4", f"{path}.errors")
    if counts.size != xscale.nbins:
        raise SchemaError(
            f"{path}.counts: {counts.size} values for a {xscale.nbins}-bin scale"
        )
    if errors.size != xscale.nbins:
        raise SchemaError(
            f"{path}.errors: {errors.size} values for a {xscale.nbins}-bin scale"
        )
    return Spectrum(
        id=_need(spec, "id", int, path),
        xscale=xscale,
        counts=counts,
        errors=errors,
        group_id=_need(spec, "group_id", int, path),
        label=_need(spec, "label", str, path),
        geometry=_geometry_from_json(spec.get("geometry"), f"{path}.geometry"),
        attributes=_attrs_from_json(spec.get("attributes", []), f"{path}.attributes"),
    )


def read_hierarchical(path) -> Run:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"$: not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "entry" not in doc:
        raise SchemaError("entry: missing")
    entry = doc["entry"]
    instrument = _need(entry, "instrument", str, "entry")
    run_number = _need(entry, "run_number", int, "entry")
    start_time = _need(entry, "start_time", int, "entry")
    data = _need(entry, "data", list, "entry")
    datasets = []
    for i, group in enumerate(data):
        gpath = f"entry.data[{i}]"
        if not isinstance(group, dict):
            raise SchemaError(f"{gpath}: expected an object")
        units = _need(group, "x_units", str, gpath)
        try:
            x_units = XUnits(units)
        except ValueError:
            raise SchemaError(f"{gpath}.x_units: unknown units {units!r}") from None
        spectra_json = _need(group, "spectra", list, gpath)
        spectra = tuple(
            _spectrum_from_json(s, f"{gpath}.spectra[{j}]")
            for j, s in enumerate(spectra_json)
        )
        datasets.append(
            DataSet(
                title=_need(group, "title", str, gpath),
                x_units=x_units,
                spectra=spectra,
                y_units=_need(group, "y_units", str, gpath),
                attributes=_attrs_from_json(group.get("attributes", []), f"{gpath}.attributes"),
            )
        )
    return Run(
        instrument=instrument,
        run_number=run_number,
        start_time=start_time,
        datasets=tuple(datasets),
    )
