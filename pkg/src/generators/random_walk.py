import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Tuple

import numpy as np
from tqdm import tqdm

from src.models.field import OrientationField
from src.models.params import WalkParams
from src.models.se3 import exp_coefficients, matmul3, matvec3
from src.utils.tessellation import Tessellation

logger = logging.getLogger(__name__)

CHUNK_SIZE = 2048


def walk_generator(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream of one walk, independent of how walks are batched."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


class RandomWalkSimulator:
    """Left-invariant random walks G_{k+1} = G_k exp(ds a + sqrt(ds) sigma eps_k) on SE(3).

    Every walk starts at the unity element and draws its increments from its
    own Philox stream, so endpoints do not depend on chunking or on the
    number of worker threads.
    """

    def __init__(self, params: WalkParams, chunk_size: int = CHUNK_SIZE, progress: bool = True):
        self.params = params
        self.chunk_size = chunk_size
        self.progress = progress

    def _increments(self, start: int, count: int) -> np.ndarray:
        p = self.params
        eps = np.stack([walk_generator(p.seed, start + j).standard_normal((p.steps, 6))
                        for j in range(count)])
        return p.step * p.drift + np.sqrt(p.step) * p.sigma * eps

    def _run_chunk(self, start: int, count: int) -> Tuple[np.ndarray, np.ndarray]:
        increments = self._increments(start, count)
        x = np.zeros((count, 3))
        R = np.broadcast_to(np.eye(3), (count, 3, 3)).copy()
        for k in range(self.params.steps):
            dx, dR = exp_coefficients(increments[:, k])
            x = x + matvec3(R, dx)
            R = matmul3(R, dR)
        return x, R

    def sample_walk(self, index: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        """Endpoint (y, n) of a single walk."""
        x, R = self._run_chunk(index, 1)
        return x[0], R[0][:, 2]

    def endpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        """Positions (M, 3) and rotations (M, 3, 3) of all walks."""
        p = self.params
        starts = list(range(0, p.samples, self.chunk_size))
        counts = [min(self.chunk_size, p.samples - s) for s in starts]
        try:
            results: List[Tuple[np.ndarray, np.ndarray]]
            with ThreadPoolExecutor(max_workers=p.workers) as pool:
                futures = pool.map(self._run_chunk, starts, counts)
                results = list(tqdm(futures, total=len(starts), desc='random walks',
                                    disable=not self.progress))
        except Exception as e:
            logger.error(f"Error simulating random walks: {str(e)}", exc_info=True)
            raise
        x = np.concatenate([r[0] for r in results])
        R = np.concatenate([r[1] for r in results])
        logger.info(f"Simulated {p.samples} walks of {p.steps} steps (ds={p.step}) "
                    f"on {p.workers} workers")
        return x, R

    def empirical_kernel(self, dims: Tuple[int, int, int], tessellation: Tessellation,
                         spacing: float = 1.0) -> OrientationField:
        """Histogram of endpoints over voxels x nearest directions, normalized to unit mass.

        The unity element sits at the centre voxel (dims - 1) // 2.
        """
        dims = tuple(int(d) for d in dims)
        x, R = self.endpoints()
        centre = (np.array(dims) - 1) // 2
        voxel = np.rint(x / spacing).astype(np.int64) + centre
        inside = np.all((voxel >= 0) & (voxel < np.array(dims)), axis=1)
        dropped = int((~inside).sum())
        if dropped:
            logger.warning(f"{dropped} of {len(x)} walks ended outside the {dims} grid")
        direction = tessellation.nearest_vertex(R[inside][:, :, 2])
        flat = np.ravel_multi_index(tuple(voxel[inside].T), dims) * tessellation.n_vertices + direction
        counts = np.bincount(flat, minlength=int(np.prod(dims)) * tessellation.n_vertices).astype(float)
        counts = counts.reshape(dims + (tessellation.n_vertices,))
        kept = max(int(inside.sum()), 1)
        data = counts / (kept * tessellation.measures * spacing ** 3)
        return OrientationField(data, spacing, tessellation)
