"""Discrete left-invariant derivatives A1..A5 on orientation fields.

U is sampled at g = (y, R_n) for every voxel y and tessellation vertex n,
where R_n is the rotation taking e_z onto n. A shift along generator A_i
samples U at g exp(+-h A_i):

    A1, A2, A3: y +- h R_n e_p (trilinear interpolation, p = x, y, z)
    A4, A5:     direction R_n R_{e_x}(+-h_a) e_z and R_n R_{e_y}(+-h_a) e_z
                (barycentric interpolation on the tessellation)

Every shift is a sparse matrix on the flattened field, whose index is
voxel * N_o + l. The same shifts are also available as direct array
operations (scipy.ndimage for the spatial part) so the assembled matrices
can be cross-checked against a second code path.
"""

import itertools
import logging
from typing import Dict, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.ndimage import map_coordinates

from src.models.field import OrientationField
from src.models.params import BOUNDARY_MODES
from src.models.se3 import E_Z, matvec3, rot_x, rot_y, rotation_onto_batch
from src.utils.tessellation import Tessellation

logger = logging.getLogger(__name__)

SIDES = ('f', 'b', 'c')

# scipy.ndimage modes that reproduce each boundary rule of the sparse shifts
_NDIMAGE_MODES = {'periodic': 'grid-wrap', 'reflect': 'nearest', 'zero': 'grid-constant'}

FieldLike = Union[OrientationField, np.ndarray]


class LeftInvariantOperators:
    """Shift, difference and generator matrices for one grid/tessellation pair.

    Everything is built lazily and cached per instance; the matrices only
    depend on (dims, spacing, step, angular_step, boundary).
    """

    def __init__(self, tessellation: Tessellation, dims: Tuple[int, int, int],
                 spacing: float = 1.0, step: float = None, angular_step: float = None,
                 boundary: str = 'reflect'):
        if boundary not in BOUNDARY_MODES:
            raise ValueError(f"Unsupported boundary mode: {boundary}")
        if spacing <= 0:
            raise ValueError(f"Grid spacing must be positive, got {spacing}")
        self.tessellation = tessellation
        self.dims = tuple(int(d) for d in dims)
        self.spacing = float(spacing)
        self.step = self.spacing if step is None else float(step)
        self.angular_step = tessellation.mean_edge_length if angular_step is None else float(angular_step)
        if self.step <= 0 or self.angular_step <= 0:
            raise ValueError(f"Steps must be positive, got h={self.step}, h_a={self.angular_step}")
        self.boundary = boundary
        self.frames = rotation_onto_batch(tessellation.vertices)
        self._cache: Dict[tuple, object] = {}

    @classmethod
    def for_field(cls, field: OrientationField, **kwargs) -> "LeftInvariantOperators":
        return cls(field.tessellation, field.dims, field.spacing, **kwargs)

    @property
    def n_orientations(self) -> int:
        return self.tessellation.n_vertices

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def size(self) -> int:
        return self.n_voxels * self.n_orientations

    def clear_cache(self):
        self._cache.clear()

    def step_for(self, i: int) -> float:
        _check_generator(i)
        return self.step if i <= 3 else self.angular_step

    # ------------------------------------------------------------------
    # Sampling points
    # ------------------------------------------------------------------

    def spatial_offsets(self, i: int, sign: int) -> np.ndarray:
        """Offsets +-h R_n e_p in voxel units, one row per direction."""
        _check_generator(i)
        if i > 3:
            raise ValueError(f"A{i} is not a spatial generator")
        return sign * self.step * self.frames[:, :, i - 1] / self.spacing

    def angular_targets(self, i: int, sign: int) -> np.ndarray:
        """Directions R_n R_{e_p}(+-h_a) e_z, one row per direction."""
        _check_generator(i)
        if i <= 3:
            raise ValueError(f"A{i} is not an angular generator")
        rot = rot_x if i == 4 else rot_y
        tilted = rot(sign * self.angular_step) @ E_Z
        return matvec3(self.frames, np.broadcast_to(tilted, (self.n_orientations, 3)))

    # ------------------------------------------------------------------
    # Sparse matrices
    # ------------------------------------------------------------------

    def shift_matrix(self, i: int, sign: int) -> sparse.csr_matrix:
        """Operator u -> u(g exp(sign * h A_i)) on the flattened field."""
        _check_generator(i)
        if sign not in (1, -1):
            raise ValueError(f"Unsupported shift sign: {sign}")
        key = ('shift', i, sign)
        if key not in self._cache:
            if i <= 3:
                matrix = self._spatial_shift(self.spatial_offsets(i, sign))
            else:
                matrix = sparse.kron(sparse.identity(self.n_voxels, format='csr'),
                                     self.angular_block(i, sign), format='csr')
            self._cache[key] = matrix
            logger.debug(f"Assembled shift matrix A{i} sign {sign:+d}: {matrix.nnz} non-zeros")
        return self._cache[key]

    def _spatial_shift(self, offsets: np.ndarray) -> sparse.csr_matrix:
        dims = np.array(self.dims)
        n_o = self.n_orientations
        grid = np.indices(self.dims).reshape(3, -1).T.astype(float)
        voxel = np.arange(self.n_voxels)
        rows, cols, vals = [], [], []
        for l in range(n_o):
            q = grid + offsets[l]
            base = np.floor(q)
            frac = q - base
            base = base.astype(np.int64)
            for corner in itertools.product((0, 1), repeat=3):
                corner = np.array(corner)
                weight = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=1)
                idx = base + corner
                if self.boundary == 'periodic':
                    idx = np.mod(idx, dims)
                    keep = np.ones(len(idx), dtype=bool)
                elif self.boundary == 'reflect':
                    idx = np.clip(idx, 0, dims - 1)
                    keep = np.ones(len(idx), dtype=bool)
                else:
                    keep = np.all((idx >= 0) & (idx < dims), axis=1)
                target = np.ravel_multi_index(tuple(np.where(keep[:, None], idx, 0).T), self.dims)
                keep &= weight != 0.0
                rows.append(voxel[keep] * n_o + l)
                cols.append(target[keep] * n_o + l)
                vals.append(weight[keep])
        matrix = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                   shape=(self.size, self.size))
        return matrix.tocsr()

    def angular_block(self, i: int, sign: int) -> sparse.csr_matrix:
        """N_o x N_o interpolation matrix of one angular shift."""
        key = ('angular', i, sign)
        if key not in self._cache:
            _, indices, weights = self.tessellation.interpolate_batch(self.angular_targets(i, sign))
            n_o = self.n_orientations
            rows = np.repeat(np.arange(n_o), 3)
            block = sparse.csr_matrix((weights.ravel(), (rows, indices.ravel())), shape=(n_o, n_o))
            self._cache[key] = block
        return self._cache[key]

    def derivative_matrix(self, i: int, side: str) -> sparse.csr_matrix:
        if side not in SIDES:
            raise ValueError(f"Unsupported difference side: {side}")
        key = ('derivative', i, side)
        if key not in self._cache:
            h = self.step_for(i)
            eye = sparse.identity(self.size, format='csr')
            if side == 'f':
                matrix = (self.shift_matrix(i, 1) - eye) / h
            elif side == 'b':
                matrix = (eye - self.shift_matrix(i, -1)) / h
            else:
                matrix = (self.shift_matrix(i, 1) - self.shift_matrix(i, -1)) / (2.0 * h)
            self._cache[key] = matrix.tocsr()
        return self._cache[key]

    def second_difference_matrix(self, i: int) -> sparse.csr_matrix:
        """A_i^f A_i^b evaluated along the exponential curve: (S+ + S- - 2I)/h^2."""
        key = ('second', i)
        if key not in self._cache:
            h = self.step_for(i)
            eye = sparse.identity(self.size, format='csr')
            matrix = (self.shift_matrix(i, 1) + self.shift_matrix(i, -1) - 2.0 * eye) / (h * h)
            self._cache[key] = matrix.tocsr()
        return self._cache[key]

    def angular_generator_block(self, conservative: bool = True) -> sparse.csr_matrix:
        """N_o x N_o block of A4^2 + A5^2.

        The conservative variant keeps the off-diagonal stencil but
        symmetrizes it with respect to the surface measures, so that the
        block annihilates sum_l delta(n_l) u_l, and caps its diagonal at
        4/h_a^2.
        """
        key = ('angular-generator', conservative)
        if key in self._cache:
            return self._cache[key]
        n_o = self.n_orientations
        h2 = self.angular_step ** 2
        total = sum(self.angular_block(i, s) for i in (4, 5) for s in (1, -1)).tocsr()
        if not conservative:
            block = (total - 4.0 * sparse.identity(n_o, format='csr')) / h2
        else:
            off = total - sparse.diags(total.diagonal())
            delta = self.tessellation.measures
            weighted = sparse.diags(delta) @ off
            symmetric = 0.5 * (weighted + weighted.T)
            off = sparse.diags(1.0 / delta) @ symmetric / h2
            rates = np.asarray(off.sum(axis=1)).ravel()
            scale = min(1.0, (4.0 / h2) / float(rates.max())) if rates.max() > 0 else 1.0
            block = scale * (off - sparse.diags(rates))
            logger.debug(f"Conservative angular block: max rate {rates.max():.4f}, scale {scale:.4f}")
        self._cache[key] = block.tocsr()
        return self._cache[key]

    def angular_generator(self, conservative: bool = True) -> sparse.csr_matrix:
        key = ('angular-full', conservative)
        if key not in self._cache:
            self._cache[key] = sparse.kron(sparse.identity(self.n_voxels, format='csr'),
                                           self.angular_generator_block(conservative), format='csr')
        return self._cache[key]

    def assemble_generator(self, d11: float = 0.0, d33: float = 0.0, d44: float = 0.0,
                           a3: float = 0.0, conservative: bool = True) -> sparse.csr_matrix:
        """Q = D11(A1^2 + A2^2) + D33 A3^2 + D44(A4^2 + A5^2) - a3 A3^b."""
        for name, value in (('d11', d11), ('d33', d33), ('d44', d44), ('a3', a3)):
            if value < 0:
                raise ValueError(f"Generator coefficient {name} must be non-negative, got {value}")
        key = ('generator', d11, d33, d44, a3, conservative)
        if key in self._cache:
            return self._cache[key]
        q = sparse.csr_matrix((self.size, self.size))
        if d11 > 0:
            q = q + d11 * (self.second_difference_matrix(1) + self.second_difference_matrix(2))
        if d33 > 0:
            q = q + d33 * self.second_difference_matrix(3)
        if d44 > 0:
            q = q + d44 * self.angular_generator(conservative)
        if a3 > 0:
            q = q - a3 * self.derivative_matrix(3, 'b')
        q = q.tocsr()
        logger.info(f"Assembled generator on {self.dims} x {self.n_orientations}: "
                    f"D11={d11}, D33={d33}, D44={d44}, a3={a3}, nnz={q.nnz}")
        self._cache[key] = q
        return q

    def upwind(self, i: int, w: np.ndarray, sign: int) -> np.ndarray:
        """One-sided |A_i w| for a front moving with the given sign (+1 dilation, -1 erosion)."""
        forward = self.derivative_matrix(i, 'f') @ w
        backward = self.derivative_matrix(i, 'b') @ w
        return np.maximum(np.maximum(-sign * backward, sign * forward), 0.0)

    def apply_matrix(self, matrix: sparse.spmatrix, U: FieldLike) -> np.ndarray:
        data = self._as_array(U)
        return (matrix @ data.ravel()).reshape(data.shape)

    # ------------------------------------------------------------------
    # Direct array path
    # ------------------------------------------------------------------

    def shifted(self, i: int, sign: int, U: FieldLike) -> np.ndarray:
        """U(g exp(sign * h A_i)) computed without the sparse matrices."""
        data = self._as_array(U)
        if i <= 3:
            offsets = self.spatial_offsets(i, sign)
            grid = np.indices(self.dims).astype(float)
            out = np.empty_like(data)
            mode = _NDIMAGE_MODES[self.boundary]
            for l in range(self.n_orientations):
                coords = grid + offsets[l][:, None, None, None]
                out[..., l] = map_coordinates(data[..., l], coords, order=1, mode=mode, cval=0.0)
            return out
        _, indices, weights = self.tessellation.interpolate_batch(self.angular_targets(i, sign))
        return np.einsum('...lk,lk->...l', data[..., indices], weights)

    def apply_A(self, i: int, side: str, U: FieldLike) -> np.ndarray:
        if side not in SIDES:
            raise ValueError(f"Unsupported difference side: {side}")
        data = self._as_array(U)
        h = self.step_for(i)
        if side == 'f':
            return (self.shifted(i, 1, data) - data) / h
        if side == 'b':
            return (data - self.shifted(i, -1, data)) / h
        return (self.shifted(i, 1, data) - self.shifted(i, -1, data)) / (2.0 * h)

    def second_difference(self, i: int, U: FieldLike) -> np.ndarray:
        data = self._as_array(U)
        h = self.step_for(i)
        return (self.shifted(i, 1, data) - 2.0 * data + self.shifted(i, -1, data)) / (h * h)

    def second_difference_A3(self, U: FieldLike) -> np.ndarray:
        return self.second_difference(3, U)

    def laplace_beltrami(self, U: FieldLike) -> np.ndarray:
        """Angular Laplacian A4^2 + A5^2 by plain second differences.

        Less accurate than angular_generator_block(conservative=True): on f = n_z
        at order 2 it returns about -2.36 f instead of -2 f.
        """
        data = self._as_array(U)
        return self.second_difference(4, data) + self.second_difference(5, data)

    def _as_array(self, U: FieldLike) -> np.ndarray:
        data = U.data if isinstance(U, OrientationField) else np.asarray(U, dtype=float)
        expected = self.dims + (self.n_orientations,)
        if data.shape != expected:
            raise ValueError(f"Field shape {data.shape} does not match operators {expected}")
        return data


def _check_generator(i: int) -> None:
    if i not in (1, 2, 3, 4, 5):
        raise ValueError(f"Unsupported generator A{i} (expected 1..5)")
