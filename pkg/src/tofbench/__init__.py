"""Workbench for reducing, scripting, serving and viewing time-of-flight data."""

from .dataset import (
    Attribute,
    DataSet,
    DetectorGeometry,
    ExplicitXScale,
    Spectrum,
    UniformXScale,
    XUnits,
    bin_index,
    dataset_select,
    estimate_dataset_size,
    make_explicit_xscale,
    make_uniform_xscale,
    new_spectrum,
)

__version__ = "0.1.0"

__all__ = [
    "Attribute",
    "DataSet",
    "DetectorGeometry",
    "ExplicitXScale",
    "Spectrum",
    "UniformXScale",
    "XUnits",
    "bin_index",
    "dataset_select",
    "estimate_dataset_size",
    "make_explicit_xscale",
    "make_uniform_xscale",
    "new_spectrum",
    "__version__",
]
