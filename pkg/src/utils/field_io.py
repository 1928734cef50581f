"""Binary field files, glyph and curve text dumps, reproducibility manifests.

Field file layout (little endian):

    b"R3S2F\\x01"              magic
    u32 Nx, Ny, Nz, N_o
    u32 order                 0xFFFFFFFF: 3 * N_o float64 directions follow
    f64 spacing h
    f32 data[Nx * Ny * Nz * N_o]
"""

import csv
import logging
import os
import struct
from typing import Dict, List, Optional

import numpy as np
import yaml

from src.models.errors import FieldFormatError
from src.models.field import OrientationField
from src.utils.field_ops import Glyph
from src.utils.tessellation import (EXPLICIT_ORDER, build_tessellation,
                                    tessellation_from_directions)

logger = logging.getLogger(__name__)

MAGIC = b"R3S2F\x01"
EXPLICIT_TAG = 0xFFFFFFFF

_DIMS = struct.Struct('<4I')
_ORDER = struct.Struct('<I')
_SPACING = struct.Struct('<d')


def write_field(field: OrientationField, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    t = field.tessellation
    explicit = t.order == EXPLICIT_ORDER
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(_DIMS.pack(*field.dims, field.n_orientations))
        f.write(_ORDER.pack(EXPLICIT_TAG if explicit else t.order))
        if explicit:
            f.write(np.ascontiguousarray(t.vertices, dtype='<f8').tobytes())
        f.write(_SPACING.pack(field.spacing))
        f.write(np.ascontiguousarray(field.data, dtype='<f4').tobytes())
    logger.info(f"Field {field.dims} x {field.n_orientations} written to {path}")


def _read_exact(f, n: int, what: str) -> bytes:
    chunk = f.read(n)
    if len(chunk) != n:
        raise FieldFormatError(f"Truncated field file while reading {what}")
    return chunk


def read_field(path: str) -> OrientationField:
    try:
        with open(path, 'rb') as f:
            if _read_exact(f, len(MAGIC), 'magic') != MAGIC:
                raise FieldFormatError(f"{path} is not a field file")
            nx, ny, nz, n_o = _DIMS.unpack(_read_exact(f, _DIMS.size, 'dimensions'))
            (order,) = _ORDER.unpack(_read_exact(f, _ORDER.size, 'order'))
            if order == EXPLICIT_TAG:
                raw = _read_exact(f, 3 * n_o * 8, 'directions')
                tessellation = tessellation_from_directions(
                    np.frombuffer(raw, dtype='<f8').reshape(n_o, 3))
            else:
                tessellation = build_tessellation(order)
            if tessellation.n_vertices != n_o:
                raise FieldFormatError(f"Header declares {n_o} orientations, order {order} "
                                       f"has {tessellation.n_vertices}")
            (spacing,) = _SPACING.unpack(_read_exact(f, _SPACING.size, 'spacing'))
            count = nx * ny * nz * n_o
            raw = _read_exact(f, 4 * count, 'data')
            if f.read(1):
                raise FieldFormatError(f"Trailing bytes after field data in {path}")
        data = np.frombuffer(raw, dtype='<f4').astype(np.float64).reshape(nx, ny, nz, n_o)
        field = OrientationField(data, spacing, tessellation)
        logger.info(f"Field {field.dims} x {n_o} read from {path}")
        return field
    except FieldFormatError:
        raise
    except ValueError as e:
        logger.error(f"Error reading field {path}: {str(e)}")
        raise FieldFormatError(f"Invalid field file {path}: {str(e)}") from e


def write_glyphs_csv(glyphs: List[Glyph], dims, path: str) -> None:
    """One record per glyph vertex: voxel-index, l, x, y, z."""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['voxel', 'l', 'x', 'y', 'z'])
        for glyph in glyphs:
            index = int(np.ravel_multi_index(glyph.voxel, dims))
            for l, p in enumerate(glyph.points):
                writer.writerow([index, l, repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))])
    logger.info(f"{len(glyphs)} glyphs written to {path}")


def write_glyphs_obj(glyphs: List[Glyph], path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        offset = 1
        for glyph in glyphs:
            f.write(f"o voxel_{glyph.voxel[0]}_{glyph.voxel[1]}_{glyph.voxel[2]}\n")
            for p in glyph.points:
                f.write(f"v {p[0]!r} {p[1]!r} {p[2]!r}\n")
            for tri in glyph.triangles:
                f.write(f"f {tri[0] + offset} {tri[1] + offset} {tri[2] + offset}\n")
            offset += len(glyph.points)
    logger.info(f"{len(glyphs)} glyph meshes written to {path}")


def write_curve_csv(samples: Dict[str, np.ndarray], path: str) -> None:
    """Columns s, x, y, z, kappa, tau."""
    columns = ['s', 'x', 'y', 'z', 'kappa', 'tau']
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in zip(*(samples[c] for c in columns)):
            writer.writerow([repr(float(v)) for v in row])
    logger.info(f"Curve with {len(samples['s'])} samples written to {path}")


def manifest_path(output_path: str) -> str:
    return f"{output_path}.manifest.yaml"


def write_manifest(output_path: str, subcommand: str, parameters: Dict,
                   input_path: Optional[str] = None, seed: Optional[int] = None) -> str:
    path = manifest_path(output_path)
    manifest = {
        'subcommand': subcommand,
        'input': input_path,
        'output': output_path,
        'seed': seed,
        'parameters': _plain(parameters),
    }
    with open(path, 'w', encoding='utf-8') as f:
        yaml.dump(manifest, f, allow_unicode=True)
    logger.debug(f"Manifest written to {path}")
    return path


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value
