import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.models.errors import NegativeInput
from src.models.field import DtiVolume, OrientationField
from src.utils.tessellation import Tessellation

logger = logging.getLogger(__name__)


@dataclass
class Glyph:
    """Surface {y + mu U(y, n_l) n_l} of one voxel, sharing the tessellation triangles."""
    voxel: Tuple[int, int, int]
    center: np.ndarray
    points: np.ndarray
    triangles: np.ndarray

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.points - self.center, axis=1)


def dti_to_field(volume: DtiVolume, tessellation: Tessellation) -> OrientationField:
    """U(y, n) = 3 n^T D(y) n / (4 pi sum_y trace D(y) h^3)."""
    total = float(np.trace(volume.tensors, axis1=-2, axis2=-1).sum()) * volume.spacing ** 3
    n = tessellation.vertices
    quadratic = np.einsum('li,xyzij,lj->xyzl', n, volume.tensors, n)
    data = 3.0 / (4.0 * np.pi * total) * quadratic
    logger.info(f"Converted tensor volume {volume.dims} onto {tessellation.n_vertices} directions")
    return OrientationField(data, volume.spacing, tessellation)


def minmax_sharpen(U: OrientationField) -> OrientationField:
    lo = U.data.min(axis=3, keepdims=True)
    hi = U.data.max(axis=3, keepdims=True)
    span = hi - lo
    # voxels without angular contrast carry no orientation and map to 0
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, ((U.data - lo) / safe) ** 2, 0.0)
    return U.with_data(out)


def power_transform(U: OrientationField, p: float) -> OrientationField:
    if p < 1:
        raise ValueError(f"Unsupported power: {p} (expected p >= 1)")
    if np.any(U.data < 0):
        raise NegativeInput("Power transform needs a non-negative field")
    return U.with_data(U.data ** p)


def export_glyphs(U: OrientationField, mu: float,
                  voxels: Optional[Iterable[Sequence[int]]] = None) -> List[Glyph]:
    if mu <= 0:
        raise ValueError(f"Glyph scale mu must be positive, got {mu}")
    if voxels is None:
        voxels = np.ndindex(*U.dims)
    n = U.tessellation.vertices
    glyphs = []
    for voxel in voxels:
        voxel = tuple(int(v) for v in voxel)
        center = np.array(voxel, dtype=float) * U.spacing
        points = center + mu * U.data[voxel][:, None] * n
        glyphs.append(Glyph(voxel, center, points, U.tessellation.triangles))
    logger.debug(f"Exported {len(glyphs)} glyphs at scale {mu}")
    return glyphs


def crossing_phantom(shape: Tuple[int, int, int], tessellation: Tessellation,
                     fibers: Optional[Sequence[Tuple[Sequence[float], Sequence[float]]]] = None,
                     spacing: float = 1.0, radius: float = 0.75, concentration: float = 10.0,
                     background: float = 0.0) -> OrientationField:
    """Straight fibers through the grid, each voxel on a fiber carrying exp(k((n.d)^2 - 1)).

    `fibers` is a list of (point, direction) in voxel coordinates; by default two
    fibers cross at right angles in the middle of the grid. Voxels where several
    fibers pass get the sum of their glyphs.
    """
    shape = tuple(int(s) for s in shape)
    center = (np.array(shape, dtype=float) - 1.0) / 2.0
    if fibers is None:
        fibers = [(center, (0.0, 0.0, 1.0)), (center, (1.0, 0.0, 0.0))]
    grid = np.indices(shape).reshape(3, -1).T.astype(float)
    n = tessellation.vertices
    data = np.full((grid.shape[0], tessellation.n_vertices), float(background))
    for point, direction in fibers:
        d = np.asarray(direction, dtype=float)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise ValueError("Fiber direction must be non-zero")
        d = d / norm
        rel = grid - np.asarray(point, dtype=float)
        distance = np.linalg.norm(rel - np.outer(rel @ d, d), axis=1)
        on_fiber = distance <= radius
        data[on_fiber] += np.exp(concentration * ((n @ d) ** 2 - 1.0))
    logger.info(f"Built crossing phantom {shape} with {len(fibers)} fibers")
    return OrientationField(data.reshape(shape + (tessellation.n_vertices,)), spacing, tessellation)
