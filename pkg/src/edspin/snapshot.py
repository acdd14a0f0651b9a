"""Field snapshot files.

Binary layout, all little-endian::

    8 bytes   magic  b"EDSPIN1\\0"
    uint32    dim
    float64   extents[dim]
    int64     points[dim]
    float64   spacing[dim]
    float64   time
    float64   (Re psi+, Im psi+, Re psi-, Im psi-) per point, row-major

The JSON form carries the same header fields plus ``psi`` as a list of
``[re+, im+, re-, im-]`` rows and is limited to small lattices.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .field import SpinorField
from .lattice import Lattice

MAGIC = b"EDSPIN1\x00"
JSON_POINT_LIMIT = 4096


def encode(field: SpinorField) -> bytes:
    lat = field.lattice
    dim = lat.dim
    header = MAGIC + struct.pack("<I", dim)
    header += struct.pack(f"<{dim}d", *lat.extents)
    header += struct.pack(f"<{dim}q", *lat.points)
    header += struct.pack(f"<{dim}d", *lat.spacing)
    header += struct.pack("<d", field.time)
    body = _interleave(field).astype("<f8").tobytes()
    return header + body


def decode(blob: bytes, directions=None) -> SpinorField:
    if blob[:8] != MAGIC:
        raise ValueError("not an EDSPIN1 snapshot")
    offset = 8
    (dim,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    extents = struct.unpack_from(f"<{dim}d", blob, offset)
    offset += 8 * dim
    points = struct.unpack_from(f"<{dim}q", blob, offset)
    offset += 8 * dim
    offset += 8 * dim  # spacing is redundant with extents / points
    (time,) = struct.unpack_from("<d", blob, offset)
    offset += 8
    lat = Lattice(points, extents, directions)
    flat = np.frombuffer(blob, dtype="<f8", count=4 * lat.size, offset=offset)
    return SpinorField(lat, _deinterleave(flat, lat), time)


def write_snapshot(path, field: SpinorField) -> Path:
    path = Path(path)
    path.write_bytes(encode(field))
    return path


def read_snapshot(path, directions=None) -> SpinorField:
    return decode(Path(path).read_bytes(), directions)


def _interleave(field):
    rows = np.empty((field.lattice.size, 4))
    plus = field.psi[0].reshape(-1)
    minus = field.psi[1].reshape(-1)
    rows[:, 0], rows[:, 1] = plus.real, plus.imag
    rows[:, 2], rows[:, 3] = minus.real, minus.imag
    return rows


def _deinterleave(flat, lat):
    rows = np.asarray(flat, dtype=float).reshape(lat.size, 4)
    plus = (rows[:, 0] + 1j * rows[:, 1]).reshape(lat.shape)
    minus = (rows[:, 2] + 1j * rows[:, 3]).reshape(lat.shape)
    return np.stack([plus, minus])


def to_json(field: SpinorField) -> str:
    lat = field.lattice
    if lat.size > JSON_POINT_LIMIT:
        raise ValueError(f"JSON export is limited to {JSON_POINT_LIMIT} points")
    doc = {
        "format": "EDSPIN1",
        "dim": lat.dim,
        "extents": list(lat.extents),
        "points": list(lat.points),
        "spacing": list(lat.spacing),
        "time": field.time,
        "psi": _interleave(field).tolist(),
    }
    return json.dumps(doc)


def from_json(text: str, directions=None) -> SpinorField:
    doc = json.loads(text)
    lat = Lattice(doc["points"], doc["extents"], directions)
    return SpinorField(lat, _deinterleave(doc["psi"], lat), doc["time"])
