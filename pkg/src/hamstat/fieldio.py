"""Reading and writing scalar fields.

A field file starts with one header line holding a JSON object
``{"n": ..., "shape": [...], "origin": [...], "spacing": [...]}``.  In the
text variant (``.fld``) the row-major node values follow one per line; in the
binary variant (``.fldb``) they follow as little-endian float64.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .fields import Grid, GridError, ScalarField


class FieldFormatError(ValueError):
    """The file is not a well-formed field file."""


def fmt(x: float) -> str:
    """Format a number with 17 significant digits (round-trips float64)."""
    return format(float(x), ".17g")


def _header_line(grid: Grid) -> str:
    h = grid.to_header()
    return ('{"n": %d, "shape": [%s], "origin": [%s], "spacing": [%s]}'
            % (h["n"], ", ".join(str(s) for s in h["shape"]),
               ", ".join(fmt(v) for v in h["origin"]),
               ", ".join(fmt(v) for v in h["spacing"])))


def _parse_header(line: str) -> Grid:
    try:
        h = json.loads(line)
        grid = Grid(tuple(h["origin"]), tuple(h["spacing"]), tuple(h["shape"]))
    except (json.JSONDecodeError, KeyError, TypeError, GridError) as exc:
        raise FieldFormatError(f"bad field header: {exc}") from exc
    if int(h["n"]) != grid.n:
        raise FieldFormatError(f"header n={h['n']} disagrees with shape {grid.shape}")
    return grid


def write_field(field: ScalarField, path: str | Path) -> None:
    path = Path(path)
    header = _header_line(field.grid) + "\n"
    if path.suffix == ".fldb":
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(field.values.astype("<f8").tobytes(order="C"))
    elif path.suffix == ".fld":
        body = "\n".join(fmt(v) for v in field.values.ravel())
        path.write_text(header + body + "\n", encoding="ascii")
    else:
        raise FieldFormatError(f"unknown field extension {path.suffix!r} (use .fld or .fldb)")


def read_field(path: str | Path) -> ScalarField:
    path = Path(path)
    if path.suffix not in (".fld", ".fldb"):
        raise FieldFormatError(f"unknown field extension {path.suffix!r} (use .fld or .fldb)")
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise FieldFormatError("missing header line")
    try:
        grid = _parse_header(raw[:newline].decode("ascii"))
    except UnicodeDecodeError as exc:
        raise FieldFormatError("header is not ASCII") from exc
    body = raw[newline + 1:]
    if path.suffix == ".fldb":
        if len(body) != 8 * grid.size:
            raise FieldFormatError(f"expected {8 * grid.size} data bytes, got {len(body)}")
        values = np.frombuffer(body, dtype="<f8").astype(float)
    else:
        tokens = body.decode("ascii", errors="replace").split()
        if len(tokens) != grid.size:
            raise FieldFormatError(f"expected {grid.size} values, got {len(tokens)}")
        try:
            values = np.array([float(t) for t in tokens])
        except ValueError as exc:
            raise FieldFormatError(f"bad value: {exc}") from exc
    try:
        return ScalarField(grid, values)
    except ValueError as exc:
        raise FieldFormatError(str(exc)) from exc
