"""Serialization of fields, data bundles and reports.

Field files: ``<stem>.json`` holds the grid geometry, component names, dtype
and byte order; ``<stem>.bin`` holds the components back to back, each in
row-major (C) order of the grid shape, as little-endian 64-bit floats.

Data bundles are JSON lines, one record per configuration with the complex
value stored as ``[re, im]``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from .dn_form import FormValue
from .elastic_tensors import DensityPerturbationField, SpatialGrid, TIPerturbationField

__all__ = ["write_field", "read_field", "write_bundle", "read_bundle", "write_json"]

PathLike = Union[str, Path]


def write_field(field, stem: PathLike) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": type(field).__name__,
        "grid": field.grid.to_dict(),
        "components": list(field.names),
        "dtype": "<f8",
        "order": "C",
        "binary": stem.with_suffix(".bin").name,
    }
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    np.ascontiguousarray(field.values, dtype="<f8").tofile(stem.with_suffix(".bin"))
    return stem.with_suffix(".json")


def read_field(path: PathLike):
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    grid = SpatialGrid.from_dict(header["grid"])
    cls = {"TIPerturbationField": TIPerturbationField,
           "DensityPerturbationField": DensityPerturbationField}[header["kind"]]
    if tuple(header["components"]) != cls.names:
        raise ValueError("component names do not match the field kind")
    data = np.fromfile(path.parent / header["binary"], dtype=header["dtype"])
    return cls(grid, data.reshape((len(cls.names),) + grid.shape))


def write_bundle(values: Sequence[FormValue], path: PathLike, meta: dict = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for fv in values:
            fh.write(json.dumps(fv.to_dict(), sort_keys=True) + "\n")
    return path


def read_bundle(path: PathLike):
    """Return ``(meta, values)``; ``meta`` is None when the file has no header."""
    meta, out = None, []
    with Path(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "meta" in rec:
                meta = rec["meta"]
            else:
                out.append(FormValue.from_dict(rec))
    return meta, out


def _default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


def write_json(obj, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")
    return path
