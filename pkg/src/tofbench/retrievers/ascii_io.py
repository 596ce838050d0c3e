"""n-column ASCII histogram files.

Layout: '#' lines are comments, blank lines separate spectra, data rows hold
2 or 3 numeric columns (x, counts[, errors]).  The x column is either n+1
bin edges (the final row then carries the closing edge alone) or n bin
centers of a uniform scale; the row-count parity against the counts column
decides which.

Lines starting with '#!' are machine-readable directives carrying the
metadata that bare columns cannot: dataset title/units/attributes and
per-spectrum id, label, geometry, attributes, and (for uniform scales) the
exact scale parameters.  Files written here round-trip the full data model;
plain hand-written column files load fine without any directives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
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
    new_spectrum,
)

__all__ = ["read_ascii_columns", "write_ascii_columns"]


def _attrs_to_json(attrs) -> list:
    return [[a.name, list(a.value) if isinstance(a.value, tuple) else a.value] for a in attrs]


def _attrs_from_json(data, where: str) -> tuple:
    if not isinstance(data, list):
        raise ValueError(f"{where}: attributes must be a list")
    out = []
    for pair in data:
        if not isinstance(pair, list) or len(pair) != 2:
            raise ValueError(f"{where}: attribute entries must be [name, value] pairs")
        out.append(Attribute(pair[0], tuple(pair[1]) if isinstance(pair[1], list) else pair[1]))
    return tuple(out)


def _geometry_to_json(g: Optional[DetectorGeometry]):
    if g is None:
        return None
    return {
        "position": list(g.position),
        "l1_m": g.l1_m,
        "solid_angle_sr": g.solid_angle_sr,
        "efficiency": g.efficiency,
    }


def _geometry_from_json(data) -> Optional[DetectorGeometry]:
    if data is None:
        return None
    return DetectorGeometry(
        position=tuple(data["position"]),
        l1_m=data["l1_m"],
        solid_angle_sr=data.get("solid_angle_sr", 0.0),
        efficiency=data.get("efficiency", 1.0),
    )


def _fmt(v: float) -> str:
    # repr of the f64 embedding round-trips both f32 and f64 values exactly
    return repr(float(v))


def write_ascii_columns(ds: DataSet, path) -> None:
    """Write a dataset as columned text; read_ascii_columns inverts it."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {ds.title}\n")
        f.write(f"# x_units: {ds.x_units.value}   y_units: {ds.y_units}\n")
        f.write("# columns: edge count error; final row carries the closing edge\n")
        meta = {
            "title": ds.title,
            "x_units": ds.x_units.value,
            "y_units": ds.y_units,
            "attributes": _attrs_to_json(ds.attributes),
        }
        f.write(f"#! dataset {json.dumps(meta)}\n")
        for s in ds.spectra:
            f.write("\n")
            smeta = {
                "id": s.id,
                "group_id": s.group_id,
                "label": s.label,
                "geometry": _geometry_to_json(s.geometry),
                "attributes": _attrs_to_json(s.attributes),
            }
            if isinstance(s.xscale, UniformXScale):
                smeta["xscale"] = {
                    "kind": "uniform",
                    "start": s.xscale.start,
                    "end": s.xscale.end,
                    "nbins": s.xscale.nbins,
                }
            f.write(f"#! spectrum {json.dumps(smeta)}\n")
            edges = s.xscale.edges
            for i in range(s.nbins):
                f.write(f"{_fmt(edges[i])} {_fmt(s.counts[i])} {_fmt(s.errors[i])}\n")
            f.write(f"{_fmt(edges[-1])}\n")


@dataclass
class _Block:
    meta: dict
    rows: list  # (lineno, [floats])


def _parse_directive(line: str, lineno: int, path) -> tuple:
    body = line[2:].strip()
    kind, _, payload = body.partition(" ")
    if kind not in ("dataset", "spectrum"):
        raise ValueError(f"{path}:{lineno}: unknown directive {kind!r}")
    try:
        meta = json.loads(payload)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}:{lineno}: bad directive JSON: {e}") from e
    if not isinstance(meta, dict):
        raise ValueError(f"{path}:{lineno}: directive payload must be a JSON object")
    return kind, meta


def _xscale_from_meta(meta: dict, where: str) -> Optional[XScale]:
    spec = meta.get("xscale")
    if spec is None:
        return None
    if spec.get("kind") == "uniform":
        return UniformXScale(spec["start"], spec["end"], spec["nbins"])
    raise ValueError(f"{where}: unsupported xscale kind {spec.get('kind')!r}")


def _finish_block(block: _Block, index: int, path) -> Spectrum:
    rows = block.rows
    widths = {len(tokens) for _, tokens in rows[:-1]}
    last_lineno, last_tokens = rows[-1]
    body_width = widths.pop() if len(widths) == 1 else None
    if widths:
        bad = next(
            lineno for lineno, tokens in rows if len(tokens) != len(rows[0][1])
        )
        raise ValueError(f"{path}:{bad}: ragged columns")
    if body_width is None:
        body_width = len(last_tokens)
    if body_width not in (2, 3):
        raise ValueError(
            f"{path}:{rows[0][0]}: expected 2 or 3 columns, got {body_width}"
        )
    edges_convention = len(last_tokens) == 1
    if not edges_convention and len(last_tokens) != body_width:
        raise ValueError(f"{path}:{last_lineno}: ragged columns")

    data_rows = rows[:-1] if edges_convention else rows
    xcol = [tokens[0] for _, tokens in rows] if edges_convention else [
        tokens[0] for _, tokens in data_rows
    ]
    counts = np.array([tokens[1] for _, tokens in data_rows], dtype=np.float32)
    errors = None
    if body_width == 3:
        errors = np.array([tokens[2] for _, tokens in data_rows], dtype=np.float32)

    meta = block.meta
    xscale = _xscale_from_meta(meta, f"{path}: spectrum {index}")
    if xscale is None:
        if edges_convention:
            xscale = ExplicitXScale(np.asarray(xcol, dtype=np.float64))
        else:
            centers = np.asarray(xcol, dtype=np.float64)
            n = centers.size
            width = (centers[-1] - centers[0]) / (n - 1) if n > 1 else 1.0
            if width <= 0:
                raise ValueError(
                    f"{path}:{rows[0][0]}: bin centers must be increasing"
                )
            xscale = UniformXScale(centers[0] - width / 2, centers[-1] + width / 2, n)
    if xscale.nbins != counts.size:
        raise ValueError(
            f"{path}:{rows[0][0]}: {counts.size} count rows do not fit"
            f" a {xscale.nbins}-bin scale"
        )
    return new_spectrum(
        xscale,
        counts,
        errors=errors,
        id=meta.get("id", index),
        group_id=meta.get("group_id", 0),
        label=meta.get("label", ""),
        geometry=_geometry_from_json(meta.get("geometry")),
        attrs=_attrs_from_json(meta.get("attributes", []), f"{path}: spectrum {index}"),
    )


def read_ascii_columns(path) -> DataSet:
    """Parse a columned text file into a dataset."""
    ds_meta: dict = {}
    have_ds_meta = False
    blocks: list = []
    current: Optional[_Block] = None
    pending_meta: dict = {}

    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if stripped.startswith("#!"):
                kind, meta = _parse_directive(stripped, lineno, path)
                if kind == "dataset":
                    ds_meta = meta
                    have_ds_meta = True
                else:
                    pending_meta = meta
                continue
            if stripped.startswith("#"):
                continue
            if not stripped:
                if current is not None:
                    blocks.append(current)
                    current = None
                continue
            tokens = []
            for tok in stripped.split():
                try:
                    tokens.append(float(tok))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric token {tok!r}"
                    ) from None
            if current is None:
                current = _Block(meta=pending_meta, rows=[])
                pending_meta = {}
            current.rows.append((lineno, tokens))
    if current is not None:
        blocks.append(current)

    if not blocks and not have_ds_meta:
        raise ValueError(f"{path}: no data")

    spectra = tuple(
        _finish_block(block, index, path) for index, block in enumerate(blocks)
    )
    return DataSet(
        title=ds_meta.get("title", ""),
        x_units=XUnits(ds_meta.get("x_units", "tof_us")),
        spectra=spectra,
        y_units=ds_meta.get("y_units", "counts"),
        attributes=_attrs_from_json(ds_meta.get("attributes", []), f"{path}: dataset"),
    )
