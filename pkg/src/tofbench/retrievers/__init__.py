"""File I/O: native binary run files, n-column ASCII, hierarchical JSON."""

from .runfile import (
    BadMagicError,
    DirectoryEntry,
    LoadSelection,
    Run,
    RunFileDirectory,
    RunFileError,
    SelectionError,
    TruncatedError,
    UnsupportedVersionError,
    probe,
    read_run,
    read_runfile,
    write_run,
    write_runfile,
)
from .ascii_io import read_ascii_columns, write_ascii_columns
from .hierarchical import SchemaError, read_hierarchical, write_hierarchical

__all__ = [
    "BadMagicError",
    "DirectoryEntry",
    "LoadSelection",
    "Run",
    "RunFileDirectory",
    "RunFileError",
    "SchemaError",
    "SelectionError",
    "TruncatedError",
    "UnsupportedVersionError",
    "probe",
    "read_ascii_columns",
    "read_hierarchical",
    "read_run",
    "read_runfile",
    "write_ascii_columns",
    "write_hierarchical",
    "write_run",
    "write_runfile",
]
