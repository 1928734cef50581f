from dataclasses import dataclass, field, asdict
from typing import Dict, Optional

import numpy as np

BOUNDARY_MODES = ('reflect', 'periodic', 'zero')
KERNEL_KINDS = ('completion-heisenberg-kstep', 'enhancement-product', 'gaussian-estimate')


def _check_boundary(boundary: str) -> None:
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"Unsupported boundary mode: {boundary}")


@dataclass
class DiffusionParams:
    """Coefficients of the horizontal diffusions; D22 = D11 and D55 = D44 by construction."""
    d11: float = 0.0
    d33: float = 1.0
    d44: float = 0.04
    a3: float = 0.0
    t: float = 1.0
    dt: Optional[float] = None
    contrast: Optional[float] = None
    boundary: str = 'reflect'

    def __post_init__(self):
        for name in ('d11', 'd33', 'd44', 'a3', 't'):
            if getattr(self, name) < 0:
                raise ValueError(f"Diffusion parameter {name} must be non-negative, got {getattr(self, name)}")
        if self.dt is not None and self.dt <= 0:
            raise ValueError(f"Time step must be positive, got {self.dt}")
        if self.contrast is not None and self.contrast <= 0:
            raise ValueError(f"Contrast parameter K must be positive, got {self.contrast}")
        _check_boundary(self.boundary)

    @property
    def d22(self) -> float:
        return self.d11

    @property
    def d55(self) -> float:
        return self.d44

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class MorphParams:
    """Erosion/dilation coefficients with metric weights g_ii = 1/D_ii."""
    d11: float = 0.0
    d44: float = 0.4
    eta: float = 1.0
    t: float = 0.4
    dt: float = 0.02
    mode: str = 'erosion'
    threshold: float = 0.0
    adaptive_exponent: float = 1.0 / 3.0
    constant: float = 1.0
    boundary: str = 'reflect'

    def __post_init__(self):
        if self.d11 < 0 or self.d44 < 0:
            raise ValueError(f"Morphological coefficients must be non-negative, got {self.d11}, {self.d44}")
        if not 0.5 <= self.eta <= 1.0:
            raise ValueError(f"Unsupported eta: {self.eta} (expected 1/2 <= eta <= 1)")
        if self.mode not in ('erosion', 'dilation'):
            raise ValueError(f"Unsupported morphology mode: {self.mode}")
        if self.t < 0 or self.dt <= 0:
            raise ValueError(f"Invalid time settings t={self.t}, dt={self.dt}")
        _check_boundary(self.boundary)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class PseudoParams:
    balance: float = 2.0
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)

    def __post_init__(self):
        if not np.isfinite(self.balance):
            raise ValueError(f"Balance parameter C must be finite, got {self.balance}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class KernelSpec:
    kind: str = 'enhancement-product'
    d33: float = 1.0
    d44: float = 0.04
    t: float = 1.0
    lam: float = 1.0
    k: int = 1
    se2_constant: float = 1.0
    normalize: bool = False
    threshold: float = 0.01

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"Unsupported kernel kind: {self.kind}")
        if self.d44 <= 0 or (self.kind != 'completion-heisenberg-kstep' and self.d33 <= 0):
            raise ValueError(f"Kernel {self.kind} needs positive diffusion coefficients")
        if self.t <= 0 or self.lam <= 0 or self.k < 1:
            raise ValueError(f"Invalid kernel parameters t={self.t}, lambda={self.lam}, k={self.k}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class WalkParams:
    """Left-invariant random walk: drift a_i and diffusion D_ii per generator A_i."""
    drift: np.ndarray = field(default_factory=lambda: np.zeros(6))
    diffusion: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0, 0.04, 0.04, 0.0]))
    step: float = 0.01
    steps: int = 100
    samples: int = 10000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.drift = np.asarray(self.drift, dtype=float).reshape(6)
        self.diffusion = np.asarray(self.diffusion, dtype=float).reshape(6)
        if np.any(self.diffusion < 0):
            raise ValueError("Walk diffusion coefficients must be non-negative")
        if self.step <= 0 or self.steps < 1 or self.samples < 1 or self.workers < 1:
            raise ValueError(f"Invalid walk settings step={self.step}, steps={self.steps}, "
                             f"samples={self.samples}, workers={self.workers}")
        if self.seed < 0:
            raise ValueError(f"Seed must be non-negative, got {self.seed}")

    @classmethod
    def enhancement(cls, d33: float, d44: float, t: float, **kwargs) -> "WalkParams":
        step = kwargs.pop('step', 0.01)
        return cls(drift=np.zeros(6), diffusion=np.array([0.0, 0.0, d33, d44, d44, 0.0]),
                   step=step, steps=max(1, int(round(t / step))), **kwargs)

    @classmethod
    def completion(cls, a3: float, d44: float, t: float, **kwargs) -> "WalkParams":
        step = kwargs.pop('step', 0.01)
        return cls(drift=np.array([0.0, 0.0, a3, 0.0, 0.0, 0.0]),
                   diffusion=np.array([0.0, 0.0, 0.0, d44, d44, 0.0]),
                   step=step, steps=max(1, int(round(t / step))), **kwargs)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(2.0 * self.diffusion)

    @property
    def duration(self) -> float:
        return self.step * self.steps

    def to_dict(self) -> Dict:
        out = asdict(self)
        out['drift'] = self.drift.tolist()
        out['diffusion'] = self.diffusion.tolist()
        return out


@dataclass
class GeodesicInit:
    beta: float = 0.1
    z0: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.0]))
    dz0: np.ndarray = field(default_factory=lambda: np.array([-0.05, 0.0]))
    length: float = 30.0
    step: float = 0.01

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=float).reshape(2)
        self.dz0 = np.asarray(self.dz0, dtype=float).reshape(2)
        if self.beta <= 0:
            raise ValueError(f"Stiffness beta must be positive, got {self.beta}")
        if self.length <= 0 or self.step <= 0:
            raise ValueError(f"Invalid curve length {self.length} or step {self.step}")

    @property
    def wronskian(self) -> float:
        return float(self.z0[0] * self.dz0[1] - self.z0[1] * self.dz0[0])

    def to_dict(self) -> Dict:
        return {'beta': self.beta, 'z0': self.z0.tolist(), 'dz0': self.dz0.tolist(),
                'length': self.length, 'step': self.step}
