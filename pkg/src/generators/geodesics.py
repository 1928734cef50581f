"""Sub-Riemannian geodesics of the elastica-type energy integral sqrt(kappa^2 + beta^2) ds.

Along a geodesic the normalized curvature z(s) (a 2-vector) solves
z'' = beta^2 z, so it is known in closed form; curvature and torsion
follow from z, and the spatial curve is recovered by integrating the
moving frame.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from tqdm import tqdm

from src.models.errors import CurvatureBlowup, ZeroSpatialVelocity
from src.models.params import GeodesicInit
from src.models.se3 import E_X, E_Y, E_Z, LieVector, exp_coefficients

logger = logging.getLogger(__name__)

# Points per unit length used to screen ||z(s)|| < 1 before integrating.
SCREEN_DENSITY = 100


@dataclass
class GeodesicCurve:
    s: np.ndarray
    x: np.ndarray
    T: np.ndarray
    N: np.ndarray
    B: np.ndarray
    rotations: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray

    def samples(self) -> dict:
        return {'s': self.s, 'x': self.x[:, 0], 'y': self.x[:, 1], 'z': self.x[:, 2],
                'kappa': self.kappa, 'tau': self.tau}


@dataclass(frozen=True)
class ExponentialCurvature:
    vector: np.ndarray
    magnitude: float
    torsion: float


def z_of_s(init: GeodesicInit, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)[..., None]
    b = init.beta
    return np.cosh(b * s) * init.z0 + np.sinh(b * s) / b * init.dz0


def z_prime_of_s(init: GeodesicInit, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)[..., None]
    b = init.beta
    return b * np.sinh(b * s) * init.z0 + np.cosh(b * s) * init.dz0


def _screen(init: GeodesicInit, length: float) -> None:
    s = np.linspace(0.0, length, max(2, int(np.ceil(length * SCREEN_DENSITY)) + 1))
    peak = float(np.max(np.linalg.norm(z_of_s(init, s), axis=-1)))
    if peak >= 1.0:
        raise CurvatureBlowup(f"||z(s)|| reaches {peak:.6f} >= 1 on [0, {length}]")


def kappa_tau(init: GeodesicInit, s):
    """kappa = beta ||z|| / sqrt(1 - ||z||^2), tau = det(z0 | z0') / ||z||^2."""
    z = z_of_s(init, s)
    r2 = np.sum(z * z, axis=-1)
    if np.any(r2 >= 1.0):
        raise CurvatureBlowup("||z(s)|| >= 1: curvature is unbounded")
    kappa = init.beta * np.sqrt(r2) / np.sqrt(1.0 - r2)
    W = init.wronskian
    if W == 0.0:
        tau = np.zeros_like(r2)
    else:
        tau = W / r2
    return kappa, tau


def angular_velocity(init: GeodesicInit, s) -> np.ndarray:
    """(c4, c5) = beta z / sqrt(1 - ||z||^2), the frame's rotation rates about E1 and E2."""
    z = z_of_s(init, s)
    r2 = np.sum(z * z, axis=-1, keepdims=True)
    return init.beta * z / np.sqrt(1.0 - r2)


def momentum(init: GeodesicInit, s) -> np.ndarray:
    """Costate (lambda_1..lambda_6) = (-z2', z1', beta sqrt(1 - ||z||^2), z1, z2, 0)."""
    z = z_of_s(init, s)
    dz = z_prime_of_s(init, s)
    r2 = np.sum(z * z, axis=-1)
    return np.stack([-dz[..., 1], dz[..., 0], init.beta * np.sqrt(1.0 - r2),
                     z[..., 0], z[..., 1], np.zeros_like(r2)], axis=-1)


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    return u @ vt


def _frame_rates(R: np.ndarray, c: np.ndarray) -> np.ndarray:
    """d/ds of R = [E1 E2 T] for body angular velocity (c4, c5, 0)."""
    E1, E2, T = R[:, 0], R[:, 1], R[:, 2]
    return np.stack([-c[1] * T, c[0] * T, c[1] * E1 - c[0] * E2], axis=1)


def _initial_direction(init: GeodesicInit) -> np.ndarray:
    for v in (init.z0, init.dz0):
        norm = np.linalg.norm(v)
        if norm > 0:
            return v / norm
    return np.array([1.0, 0.0])


class GeodesicIntegrator:
    """RK4 integration of a geodesic from its closed-form curvature.

    The frame [E1, E2, T] starts at the identity and rotates with body rates
    (c4, c5, 0); the Frenet normal and binormal are read off it through the
    phase of z, N = sin(phi) E1 - cos(phi) E2, B = cos(phi) E1 + sin(phi) E2.
    """

    def __init__(self, init: GeodesicInit, progress: bool = True):
        self.init = init
        self.progress = progress

    def integrate(self, x0: Optional[np.ndarray] = None) -> GeodesicCurve:
        init = self.init
        _screen(init, init.length)
        steps = int(round(init.length / init.step))
        h = init.length / steps
        s = h * np.arange(steps + 1)
        x = np.zeros((steps + 1, 3))
        R = np.zeros((steps + 1, 3, 3))
        x[0] = np.zeros(3) if x0 is None else np.asarray(x0, dtype=float)
        R[0] = np.eye(3)
        try:
            for k in tqdm(range(steps), desc='geodesic', disable=not self.progress):
                c0 = angular_velocity(init, s[k])
                ch = angular_velocity(init, s[k] + 0.5 * h)
                c1 = angular_velocity(init, s[k] + h)
                Rk = R[k]
                k1 = _frame_rates(Rk, c0)
                k2 = _frame_rates(Rk + 0.5 * h * k1, ch)
                k3 = _frame_rates(Rk + 0.5 * h * k2, ch)
                k4 = _frame_rates(Rk + h * k3, c1)
                x[k + 1] = x[k] + h / 6.0 * (Rk[:, 2] + 2.0 * (Rk[:, 2] + 0.5 * h * k1[:, 2])
                                             + 2.0 * (Rk[:, 2] + 0.5 * h * k2[:, 2])
                                             + (Rk[:, 2] + h * k3[:, 2]))
                R[k + 1] = _orthonormalize(Rk + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        except Exception as e:
            logger.error(f"Error integrating geodesic: {str(e)}", exc_info=True)
            raise
        kappa, tau = kappa_tau(init, s)
        z = z_of_s(init, s)
        d = _initial_direction(init)
        phi = np.where(np.linalg.norm(z, axis=-1) > 0, np.arctan2(z[:, 1], z[:, 0]),
                       np.arctan2(d[1], d[0]))
        E1, E2, T = R[:, :, 0], R[:, :, 1], R[:, :, 2]
        N = np.sin(phi)[:, None] * E1 - np.cos(phi)[:, None] * E2
        B = np.cos(phi)[:, None] * E1 + np.sin(phi)[:, None] * E2
        logger.info(f"Integrated geodesic: beta={init.beta}, L={init.length}, {steps} steps")
        return GeodesicCurve(s, x, T, N, B, R, kappa, tau)


def integrate_frenet(init: GeodesicInit, x0: Optional[np.ndarray] = None,
                     progress: bool = False) -> GeodesicCurve:
    return GeodesicIntegrator(init, progress=progress).integrate(x0)


def initial_frame(init: GeodesicInit):
    """T0 = e_z, N0 = d2 e_x - d1 e_y, B0 = d1 e_x + d2 e_y with d the unit direction of z0."""
    d = _initial_direction(init)
    return E_Z.copy(), d[1] * E_X - d[0] * E_Y, d[0] * E_X + d[1] * E_Y


def spatial_momentum(curve: GeodesicCurve, init: GeodesicInit) -> np.ndarray:
    """Body costate mapped to the fixed frame: (R p, R l + x x R p), conserved along geodesics."""
    lam = momentum(init, curve.s)
    linear = np.einsum('sij,sj->si', curve.rotations, lam[:, :3])
    angular = np.einsum('sij,sj->si', curve.rotations, lam[:, 3:]) + np.cross(curve.x, linear)
    return np.concatenate([linear, angular], axis=1)


def momentum_check(curve: GeodesicCurve, init: GeodesicInit) -> float:
    mu = spatial_momentum(curve, init)
    return float(np.max(np.linalg.norm(mu - mu[0], axis=1)))


def preservation_laws(init: GeodesicInit, s) -> np.ndarray:
    """(lambda1^2 + lambda2^2 + lambda3^2, lambda3^2/beta^2 + lambda4^2 + lambda5^2) along s."""
    lam = momentum(init, s)
    first = lam[..., 0] ** 2 + lam[..., 1] ** 2 + lam[..., 2] ** 2
    second = lam[..., 2] ** 2 / init.beta ** 2 + lam[..., 3] ** 2 + lam[..., 4] ** 2
    return np.stack([first, second], axis=-1)


def planar_closed_form(init: GeodesicInit, s, x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Position for z0' = -beta z0, where ||z|| = r e^{-beta s} and the curve stays planar."""
    if not np.allclose(init.dz0, -init.beta * init.z0, atol=1e-14, rtol=0.0):
        raise ValueError("The planar closed form needs z0' = -beta z0")
    r = float(np.linalg.norm(init.z0))
    s = np.asarray(s, dtype=float)
    T0, N0, _ = initial_frame(init)
    start = np.zeros(3) if x0 is None else np.asarray(x0, dtype=float)
    if r == 0.0:
        return start + s[..., None] * T0
    b = init.beta
    u = r * np.exp(-b * s)

    def F(v):
        root = np.sqrt(1.0 - v * v)
        return root - np.log((1.0 + root) / v)

    I1 = (F(r) - F(u)) / b
    I2 = (r - u) / b
    q = np.sqrt(1.0 - r * r)
    along = q * I1 + r * I2
    across = r * I1 - q * I2
    return start + along[..., None] * T0 + across[..., None] * N0


def exponential_curve_curvature(c: LieVector, t: float = 0.0) -> ExponentialCurvature:
    """Curvature and torsion of the spatial part of t -> exp(t c), a circular helix."""
    v = c.spatial
    w = c.angular
    speed2 = float(v @ v)
    if speed2 == 0.0:
        raise ZeroSpatialVelocity("Exponential curve has no spatial velocity")
    _, R = exp_coefficients(c.coefficients, t)
    bend = np.cross(w, v)
    return ExponentialCurvature(R @ bend / speed2, float(np.linalg.norm(bend)) / speed2,
                                float(v @ w) / speed2)
