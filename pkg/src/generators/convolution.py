import logging
from typing import Callable, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.models.errors import WindowTooSmall
from src.models.field import OrientationField
from src.models.params import KernelSpec
from src.models.se3 import matvec3, rotation_onto_batch
from src.utils.kernels import KernelFunction, gaussian_estimate_kernel, kernel_function
from src.utils.tessellation import Tessellation

logger = logging.getLogger(__name__)

# Kernel mass allowed outside the truncation window.
WINDOW_TOLERANCE = 0.01

MAX_WINDOW_RADIUS = 8

KernelLike = Union[KernelSpec, KernelFunction]


def _offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return np.stack(np.meshgrid(r, r, r, indexing='ij'), axis=-1).reshape(-1, 3)


def _resolve(kernel: KernelLike) -> Callable:
    return kernel_function(kernel) if isinstance(kernel, KernelSpec) else kernel


def kernel_table(kernel: KernelLike, radius: int, tessellation: Tessellation,
                 spacing: float) -> Tuple[np.ndarray, np.ndarray]:
    """K[l', d, l] = k(R_{l'}^T d h, R_{l'}^T n_l) over all window offsets d."""
    k = _resolve(kernel)
    offsets = _offsets(radius)
    n = tessellation.vertices
    frames = rotation_onto_batch(n)
    table = np.empty((len(n), len(offsets), len(n)))
    for lp, R in enumerate(frames):
        RT = np.broadcast_to(R.T, (len(offsets), 3, 3))
        y = matvec3(RT, offsets * spacing)
        directions = n @ R
        y_b = np.broadcast_to(y[:, None, :], (len(offsets), len(n), 3))
        n_b = np.broadcast_to(directions[None, :, :], (len(offsets), len(n), 3))
        table[lp] = k(y_b, n_b)
    return offsets, table


def sample_kernel(kernel: KernelLike, radius: int, tessellation: Tessellation,
                  spacing: float = 1.0) -> OrientationField:
    """Kernel values k(d h, n_l) on a (2r+1)^3 window centred on the unity element."""
    k = _resolve(kernel)
    offsets = _offsets(radius)
    n = tessellation.vertices
    y = np.broadcast_to((offsets * spacing)[:, None, :], (len(offsets), len(n), 3))
    values = k(y, np.broadcast_to(n[None], (len(offsets), len(n), 3)))
    side = 2 * radius + 1
    return OrientationField(values.reshape(side, side, side, len(n)), spacing, tessellation)


def _window_mass(field: OrientationField) -> np.ndarray:
    """Kernel mass per Chebyshev shell around the centre voxel."""
    r = (field.dims[0] - 1) // 2
    idx = np.abs(np.indices(field.dims) - r).max(axis=0)
    per_voxel = (field.data * field.tessellation.measures).sum(axis=-1) * field.spacing ** 3
    return np.bincount(idx.ravel(), weights=per_voxel.ravel(), minlength=r + 1)


def default_window_radius(spec: KernelSpec, tessellation: Tessellation, spacing: float = 1.0,
                          max_radius: int = MAX_WINDOW_RADIUS) -> int:
    """Smallest window holding 99% of the Gaussian-estimate mass."""
    sampled = sample_kernel(lambda y, n: gaussian_estimate_kernel(y, n, spec.t, spec.d33, spec.d44),
                            max_radius, tessellation, spacing)
    shells = np.cumsum(_window_mass(sampled))
    if shells[-1] <= 0:
        return 1
    radius = int(np.argmax(shells >= (1.0 - WINDOW_TOLERANCE) * shells[-1]))
    logger.debug(f"Default window radius for {spec.kind}: {max(radius, 1)}")
    return max(radius, 1)


def _check_window(kernel: KernelLike, radius: int, tessellation: Tessellation, spacing: float):
    wide = _window_mass(sample_kernel(kernel, 2 * radius, tessellation, spacing))
    total = wide.sum()
    if total <= 0:
        return
    outside = 1.0 - wide[:radius + 1].sum() / total
    if outside > WINDOW_TOLERANCE:
        raise WindowTooSmall(f"{100 * outside:.2f}% of the kernel mass lies outside radius {radius}")


def _shifted(data: np.ndarray, d: np.ndarray, boundary: str, fill: float) -> np.ndarray:
    """data[y - d] with periodic wrap or a constant fill outside the grid."""
    if boundary == 'periodic':
        return np.roll(data, shift=tuple(int(v) for v in d), axis=(0, 1, 2))
    out = np.full_like(data, fill)
    src, dst = [], []
    for size, shift in zip(data.shape[:3], d):
        shift = int(shift)
        if abs(shift) >= size:
            return out
        if shift >= 0:
            src.append(slice(0, size - shift))
            dst.append(slice(shift, size))
        else:
            src.append(slice(-shift, size))
            dst.append(slice(0, size + shift))
    out[tuple(dst)] = data[tuple(src)]
    return out


def r3s2_convolve(U: OrientationField, kernel: KernelLike, radius: Optional[int] = None,
                  boundary: str = 'zero', check_window: bool = True,
                  progress: bool = True) -> OrientationField:
    """sum over y', l' of k(R_{l'}^T (y - y'), R_{l'}^T n_l) U(y', n_{l'}) delta(n_{l'}) h^3."""
    if boundary not in ('zero', 'periodic'):
        raise ValueError(f"Unsupported convolution boundary: {boundary}")
    if radius is None:
        if not isinstance(kernel, KernelSpec):
            raise ValueError("A window radius is needed for kernel callables")
        radius = default_window_radius(kernel, U.tessellation, U.spacing)
    try:
        if check_window:
            _check_window(kernel, radius, U.tessellation, U.spacing)
        offsets, table = kernel_table(kernel, radius, U.tessellation, U.spacing)
        weights = U.tessellation.measures[:, None] * U.spacing ** 3
        flat_shape = (-1, U.n_orientations)
        out = np.zeros(U.data.reshape(flat_shape).shape)
        for j, d in enumerate(tqdm(offsets, desc='convolution', disable=not progress)):
            block = table[:, j, :] * weights
            if not np.any(block):
                continue
            out += _shifted(U.data, d, boundary, 0.0).reshape(flat_shape) @ block
        logger.info(f"Convolved {U.dims} x {U.n_orientations} with a radius-{radius} window")
        return U.with_data(out)
    except Exception as e:
        logger.error(f"Error in group convolution: {str(e)}", exc_info=True)
        raise


def morph_window(table: np.ndarray, offsets: np.ndarray, value_range: float) -> np.ndarray:
    """Offsets whose kernel can still attain the inf/sup: min over directions <= value range."""
    reachable = np.min(table, axis=(0, 2)) <= value_range
    return np.nonzero(reachable)[0]


def morph_convolve(U: OrientationField, kernel: Callable, radius: int, mode: str = 'erosion',
                   boundary: str = 'zero', progress: bool = True) -> OrientationField:
    """(min,+) erosion or (max,-) dilation with a morphological kernel.

    erosion:  min over (y', l') of U(y', n_l') + k(R_{l'}^T (y - y'), R_{l'}^T n_l)
    dilation: max over (y', l') of U(y', n_l') - k(R_{l'}^T (y - y'), R_{l'}^T n_l)
    """
    if mode not in ('erosion', 'dilation'):
        raise ValueError(f"Unsupported morphology mode: {mode}")
    if boundary not in ('zero', 'periodic'):
        raise ValueError(f"Unsupported convolution boundary: {boundary}")
    try:
        offsets, table = kernel_table(kernel, radius, U.tessellation, U.spacing)
        value_range = float(U.data.max() - U.data.min())
        active = morph_window(table, offsets, value_range)
        sign = 1.0 if mode == 'erosion' else -1.0
        fill = np.inf if mode == 'erosion' else -np.inf
        flat_shape = (-1, U.n_orientations)
        best = np.full(U.data.reshape(flat_shape).shape, fill)
        for j in tqdm(active, desc=mode, disable=not progress):
            shifted = _shifted(U.data, offsets[j], boundary, fill).reshape(flat_shape)
            candidates = shifted[:, :, None] + sign * table[None, :, j, :]
            if mode == 'erosion':
                best = np.minimum(best, candidates.min(axis=1))
            else:
                best = np.maximum(best, candidates.max(axis=1))
        logger.info(f"Morphological {mode} over {len(active)} of {len(offsets)} window offsets")
        return U.with_data(best, signed=True)
    except Exception as e:
        logger.error(f"Error in morphological convolution: {str(e)}", exc_info=True)
        raise
