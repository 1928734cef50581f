import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull

from src.models.errors import OrderTooLarge

logger = logging.getLogger(__name__)

MAX_ORDER = 6

# Order stored for tessellations built from an explicit direction set.
EXPLICIT_ORDER = -1

_TESSELLATION_CACHE: Dict[int, "Tessellation"] = {}


@dataclass(frozen=True)
class InterpolationWeights:
    triangle: int
    indices: Tuple[int, int, int]
    weights: Tuple[float, float, float]


@dataclass(eq=False)
class Tessellation:
    """Icosahedral sampling of S^2 with triangles and per-vertex surface measures."""
    order: int
    vertices: np.ndarray
    triangles: np.ndarray
    measures: Optional[np.ndarray] = None
    _inverses: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.array(self.vertices, dtype=float)
        self.triangles = np.array(self.triangles, dtype=np.int64)
        if self.measures is None:
            self.measures = surface_measures(self)
        else:
            self.measures = np.array(self.measures, dtype=float)
        # 3x3 inverses of the vertex matrices, reused by every interpolation
        self._inverses = np.linalg.inv(np.transpose(self.vertices[self.triangles], (0, 2, 1)))
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        self.measures.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edges(self) -> np.ndarray:
        pairs = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                                self.triangles[:, [2, 0]]])
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges()
        chord = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))

    @property
    def mean_edge_length(self) -> float:
        return float(np.mean(self.edge_lengths()))

    def incident_triangles(self, k: int) -> List[int]:
        return [int(i) for i in np.nonzero(np.any(self.triangles == k, axis=1))[0]]

    def nearest_vertex(self, n: np.ndarray, chunk: int = 65536) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        flat = n.reshape(-1, 3)
        out = np.empty(len(flat), dtype=np.int64)
        for start in range(0, len(flat), chunk):
            out[start:start + chunk] = np.argmax(flat[start:start + chunk] @ self.vertices.T, axis=1)
        return out.reshape(n.shape[:-1])

    def interpolate_batch(self, n: np.ndarray, chunk: int = 2048
                          ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Locate the triangle holding each direction and its interpolation weights.

        Weights are the planar barycentric coordinates of the radial projection
        onto the triangle, normalized to sum to one. Directions on a shared
        boundary go to the lowest-index triangle.

        Returns:
            triangles (P,), vertex indices (P, 3), weights (P, 3)
        """
        n = np.asarray(n, dtype=float)
        flat = n.reshape(-1, 3)
        tri = np.empty(len(flat), dtype=np.int64)
        lam = np.empty((len(flat), 3))
        for start in range(0, len(flat), chunk):
            block = flat[start:start + chunk]
            coords = np.einsum('tij,pj->pti', self._inverses, block)
            score = coords.min(axis=2)
            inside = score >= -1e-12
            first = np.argmax(inside, axis=1)
            # numerically lost directions fall back to the least violated triangle
            missing = ~inside[np.arange(len(block)), first]
            if np.any(missing):
                first[missing] = np.argmax(score[missing], axis=1)
            tri[start:start + len(block)] = first
            lam[start:start + len(block)] = coords[np.arange(len(block)), first]
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum(axis=1, keepdims=True)
        indices = self.triangles[tri]
        shape = n.shape[:-1]
        return tri.reshape(shape), indices.reshape(shape + (3,)), lam.reshape(shape + (3,))

    def interpolate(self, n: np.ndarray) -> InterpolationWeights:
        n = np.asarray(n, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError(f"Expected a unit direction, got norm {np.linalg.norm(n)}")
        tri, idx, w = self.interpolate_batch(n[None])
        return InterpolationWeights(int(tri[0]), tuple(int(i) for i in idx[0]),
                                    tuple(float(v) for v in w[0]))

    def dump_csv(self, path: str) -> None:
        """Write vertices (index, x, y, z, measure) followed by triangles."""
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['index', 'x', 'y', 'z', 'measure'])
            for k, (v, m) in enumerate(zip(self.vertices, self.measures)):
                writer.writerow([k, repr(v[0]), repr(v[1]), repr(v[2]), repr(m)])
            writer.writerow(['triangle', 'i', 'j', 'k'])
            for t, (i, j, k) in enumerate(self.triangles):
                writer.writerow([t, i, j, k])
        logger.info(f"Tessellation with {self.n_vertices} vertices written to {path}")


def _orient_outward(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    flip = np.einsum('ij,ij->i', np.cross(b - a, c - a), a + b + c) < 0
    triangles = triangles.copy()
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def _icosahedron() -> Tuple[np.ndarray, np.ndarray]:
    """Unit icosahedron with vertices at both poles and two rings of five."""
    scale = 1.0 / np.sqrt(1.25)
    t = 2.0 * np.pi * np.arange(5) / 5.0
    upper = scale * np.stack([np.cos(t), np.sin(t), 0.5 * np.ones(5)], axis=1)
    lower = scale * np.stack([np.cos(t + 0.2 * np.pi), np.sin(t + 0.2 * np.pi), -0.5 * np.ones(5)], axis=1)
    vertices = np.vstack([[0.0, 0.0, 1.0], upper, lower, [0.0, 0.0, -1.0]])
    faces = ConvexHull(vertices).simplices
    faces = _orient_outward(vertices, faces)
    faces = np.array([np.roll(f, -int(np.argmin(f))) for f in faces])
    faces = faces[np.lexsort(faces.T[::-1])]
    return vertices, faces


def build_tessellation(order: int) -> Tessellation:
    """Subdivide every icosahedron face into (order+1)^2 triangles and project to S^2.

    Vertices are keyed by their exact integer barycentric weights on the base
    vertices, so points on shared edges are created once and the numbering is
    deterministic.
    """
    if order < 0:
        raise ValueError(f"Unsupported tessellation order: {order}")
    if order > MAX_ORDER:
        raise OrderTooLarge(f"Tessellation order {order} exceeds {MAX_ORDER}")
    if order in _TESSELLATION_CACHE:
        return _TESSELLATION_CACHE[order]

    base, faces = _icosahedron()
    m = order + 1
    keys: Dict[Tuple[Tuple[int, int], ...], int] = {}
    points: List[np.ndarray] = []

    def vertex(weights: Dict[int, int]) -> int:
        key = tuple(sorted((k, w) for k, w in weights.items() if w > 0))
        if key not in keys:
            p = sum(w * base[k] for k, w in key)
            keys[key] = len(points)
            points.append(p / np.linalg.norm(p))
        return keys[key]

    for k in range(len(base)):
        vertex({k: m})

    triangles: List[Tuple[int, int, int]] = []
    for a, b, c in faces:
        grid = {}
        for i in range(m + 1):
            for j in range(m + 1 - i):
                weights: Dict[int, int] = {}
                for idx, w in ((a, m - i - j), (b, i), (c, j)):
                    weights[idx] = weights.get(idx, 0) + w
                grid[(i, j)] = vertex(weights)
        for i in range(m):
            for j in range(m - i):
                triangles.append((grid[(i, j)], grid[(i + 1, j)], grid[(i, j + 1)]))
                if i + j < m - 1:
                    triangles.append((grid[(i + 1, j)], grid[(i + 1, j + 1)], grid[(i, j + 1)]))

    vertices = np.array(points)
    tess = Tessellation(order, vertices, _orient_outward(vertices, np.array(triangles)))
    logger.info(f"Built order-{order} tessellation: {tess.n_vertices} vertices, "
                f"{tess.n_triangles} triangles")
    _TESSELLATION_CACHE[order] = tess
    return tess


def tessellation_from_directions(directions: np.ndarray) -> Tessellation:
    """Tessellation of an explicit direction set via its convex hull."""
    directions = np.asarray(directions, dtype=float)
    norms = np.linalg.norm(directions, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("Explicit directions must be unit vectors")
    triangles = _orient_outward(directions, ConvexHull(directions).simplices)
    return Tessellation(EXPLICIT_ORDER, directions, triangles)


def _spherical_excess(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    def arc(p, q):
        return 2.0 * np.arcsin(np.clip(np.linalg.norm(p - q, axis=-1) / 2.0, 0.0, 1.0))

    s_ab, s_bc, s_ca = arc(a, b), arc(b, c), arc(c, a)
    s = (s_ab + s_bc + s_ca) / 2.0
    product = (np.tan(s / 2.0) * np.tan((s - s_ab) / 2.0)
               * np.tan((s - s_bc) / 2.0) * np.tan((s - s_ca) / 2.0))
    return 4.0 * np.arctan(np.sqrt(np.clip(product, 0.0, None)))


def surface_measures(t: Tessellation) -> np.ndarray:
    """delta(n_k): a third of the areas of the spherical triangles around each vertex."""
    v = t.vertices
    areas = _spherical_excess(v[t.triangles[:, 0]], v[t.triangles[:, 1]], v[t.triangles[:, 2]])
    measures = np.zeros(len(v))
    for i in range(3):
        np.add.at(measures, t.triangles[:, i], areas / 3.0)
    return measures
