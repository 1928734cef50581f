from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.models.errors import NonSPD
from src.utils.tessellation import Tessellation


@dataclass(eq=False)
class OrientationField:
    """Scalar field U(y, n_l) over a voxel grid times the tessellation directions.

    `data` has shape (Nx, Ny, Nz, N_o); flattening it in C order gives the
    file layout index ((x*Ny + y)*Nz + z)*N_o + l.
    """
    data: np.ndarray
    spacing: float
    tessellation: Tessellation
    signed: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 4:
            raise ValueError(f"Field data must be 4-dimensional, got shape {self.data.shape}")
        if self.data.shape[3] != self.tessellation.n_vertices:
            raise ValueError(f"Field has {self.data.shape[3]} orientations, tessellation "
                             f"has {self.tessellation.n_vertices}")
        if self.spacing <= 0:
            raise ValueError(f"Grid spacing must be positive, got {self.spacing}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("Field contains non-finite values")

    @classmethod
    def zeros(cls, shape: Tuple[int, int, int], tessellation: Tessellation,
              spacing: float = 1.0) -> "OrientationField":
        return cls(np.zeros(tuple(shape) + (tessellation.n_vertices,)), spacing, tessellation)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape[:3])

    @property
    def n_orientations(self) -> int:
        return self.data.shape[3]

    @property
    def size(self) -> int:
        return self.data.size

    def with_data(self, data: np.ndarray, signed: bool = None) -> "OrientationField":
        return OrientationField(np.asarray(data, dtype=float).reshape(self.data.shape),
                                self.spacing, self.tessellation,
                                self.signed if signed is None else signed)

    def copy(self) -> "OrientationField":
        return self.with_data(self.data.copy())

    def mass(self) -> float:
        """Integral sum U(y, n_l) delta(n_l) h^3."""
        return float(np.sum(self.data * self.tessellation.measures) * self.spacing ** 3)

    def voxel_positions(self) -> np.ndarray:
        idx = np.stack(np.meshgrid(*[np.arange(d) for d in self.dims], indexing='ij'), axis=-1)
        return idx * self.spacing

    def summary(self) -> dict:
        return {
            'dims': list(self.dims),
            'n_orientations': self.n_orientations,
            'order': self.tessellation.order,
            'spacing': float(self.spacing),
            'min': float(self.data.min()),
            'max': float(self.data.max()),
            'mass': self.mass(),
        }


@dataclass(eq=False)
class DtiVolume:
    """Per-voxel symmetric positive-definite diffusion tensors, shape (Nx, Ny, Nz, 3, 3)."""
    tensors: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=float)
        if self.tensors.ndim != 5 or self.tensors.shape[-2:] != (3, 3):
            raise ValueError(f"Tensor volume must have shape (Nx, Ny, Nz, 3, 3), got {self.tensors.shape}")
        if not np.allclose(self.tensors, np.swapaxes(self.tensors, -1, -2), atol=1e-12, rtol=0.0):
            raise NonSPD("Diffusion tensors are not symmetric")
        if np.any(np.linalg.eigvalsh(self.tensors) <= 0.0):
            raise NonSPD("Diffusion tensors must have positive eigenvalues")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.tensors.shape[:3])
