"""Serialization: binary field containers, CSV tables, JSON reports.

Binary container layout (little-endian, no padding); the same table
appears in the README:

    offset  size  content
    0       4     magic ``b"NLHF"``
    4       4     format version, uint32 (currently 1)
    8       4     spatial dimension, uint32
    12      4     cells per side, uint32
    16      1     boundary flavor, uint8 (0 dirichlet, 1 periodic)
    17      1     payload kind, uint8 (0 scalar nodal, 1 element vector)
    18      2     reserved, zero
    20      8     side length, float64
    28      ...   payload: float64, row-major

Scalar payloads hold one value per node in node order; element-vector
payloads hold ``dim`` floats per element, components fastest.  CSV output
is one row per node or element with its coordinates, ready for plotting.
"""

from __future__ import annotations

import csv
import json
import struct

import numpy as np

from . import fields as F

__all__ = [
    "FieldFormatError",
    "read_field",
    "write_field",
    "field_to_csv",
    "report_points_to_csv",
    "reports_to_json",
]

MAGIC = b"NLHF"
FORMAT_VERSION = 1
KIND_SCALAR = 0
KIND_ELEMENT_VECTOR = 1

_HEADER = struct.Struct("<4sIIIBBHd")
_BOUNDARY_CODES = {F.DIRICHLET: 0, F.PERIODIC: 1}
_BOUNDARY_NAMES = {code: name for name, code in _BOUNDARY_CODES.items()}


class FieldFormatError(ValueError):
    """Raised when a field file does not parse or cannot be written."""


def write_field(path, field) -> None:
    """Serialize a ScalarField or ElementVectorField to ``path``."""
    if isinstance(field, F.ScalarField):
        kind, payload = KIND_SCALAR, field.values
    elif isinstance(field, F.ElementVectorField):
        kind, payload = KIND_ELEMENT_VECTOR, field.vectors
    else:
        raise FieldFormatError(
            f"fieldio.write_field: cannot serialize {type(field).__name__}"
        )
    grid = field.grid
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        grid.dim,
        grid.n,
        _BOUNDARY_CODES[grid.boundary],
        kind,
        0,
        grid.side_length,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def read_field(path):
    """Read a field written by :func:`write_field`.

    Returns a ScalarField or ElementVectorField according to the payload
    kind byte.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FieldFormatError(f"fieldio.read_field: {path}: truncated header")
    magic, version, dim, n, bcode, kind, _, side = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FieldFormatError(f"fieldio.read_field: {path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FieldFormatError(
            f"fieldio.read_field: {path}: unsupported format version {version}"
        )
    if bcode not in _BOUNDARY_NAMES:
        raise FieldFormatError(
            f"fieldio.read_field: {path}: unknown boundary code {bcode}"
        )
    try:
        grid = F.Grid(int(dim), int(n), float(side), _BOUNDARY_NAMES[bcode])
    except ValueError as err:
        raise FieldFormatError(f"fieldio.read_field: {path}: {err}") from err
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if kind == KIND_SCALAR:
        if values.size != grid.n_nodes:
            raise FieldFormatError(
                f"fieldio.read_field: {path}: scalar payload has {values.size} "
                f"values, grid needs {grid.n_nodes}"
            )
        return F.ScalarField(grid, values)
    if kind == KIND_ELEMENT_VECTOR:
        expected = grid.n_elements * grid.dim
        if values.size != expected:
            raise FieldFormatError(
                f"fieldio.read_field: {path}: vector payload has {values.size} "
                f"values, grid needs {expected}"
            )
        return F.ElementVectorField(grid, values.reshape(grid.n_elements, grid.dim))
    raise FieldFormatError(f"fieldio.read_field: {path}: unknown payload kind {kind}")


def field_to_csv(path, field) -> None:
    """Write one row per node (scalar) or element barycenter (vector).

    Floats are emitted with ``repr`` so the values survive a text
    round-trip exactly.
    """
    grid = field.grid
    axes = [f"x{i + 1}" for i in range(grid.dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if isinstance(field, F.ScalarField):
            writer.writerow(axes + ["value"])
            for xy, v in zip(F.node_coordinates(grid), field.values):
                writer.writerow([repr(float(c)) for c in xy] + [repr(float(v))])
        elif isinstance(field, F.ElementVectorField):
            writer.writerow(axes + [f"v{i + 1}" for i in range(grid.dim)])
            for xy, vec in zip(F.element_barycenters(grid), field.vectors):
                writer.writerow(
                    [repr(float(c)) for c in xy] + [repr(float(c)) for c in vec]
                )
        else:
            raise FieldFormatError(
                f"fieldio.field_to_csv: cannot serialize {type(field).__name__}"
            )


def report_points_to_csv(path, report) -> None:
    """Write every measured point of one experiment series.

    Columns are ``abscissa,value,sample_seed``; floor-excluded points are
    part of the measurement cloud and appear alongside the fitted ones,
    ordered by abscissa.
    """
    rows = [(a, v, s) for (a, v), s in zip(report.points, report.sample_seeds)]
    rows += [(a, v, s) for a, v, s, _ in report.excluded]
    rows.sort(key=lambda row: row[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["abscissa", "value", "sample_seed"])
        for a, v, s in rows:
            writer.writerow([repr(float(a)), repr(float(v)), s])


def reports_to_json(path, reports) -> None:
    """Write a list of experiment reports as a JSON array."""
    with open(path, "w") as fh:
        json.dump([rep.as_dict() for rep in reports], fh, indent=2)
        fh.write("\n")
