"""Closed-form kernels on R^3 x| S^2.

Linear kernels (completion resolvents, enhancement estimates, Gaussian
estimates) and the morphological kernels used by erosion/dilation. All
functions are vectorized over leading axes: positions y are (..., 3) and
orientations n are (..., 3) unit vectors, both in the frame of the kernel
centre (the unity element sits at y = 0, n = e_z).
"""

import logging
from typing import Callable, Dict

import numpy as np
from scipy.special import gammaln

from src.models.params import KernelSpec, MorphParams
from src.models.se3 import (angles_from_normal_batch, log_coefficients,
                            log_section_coefficients, rotation_onto_batch,
                            weighted_modulus_coefficients)

logger = logging.getLogger(__name__)

KernelFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Below this |theta| the SE(2) estimate uses cos(theta/2)/(1 - theta^2/24).
SE2_SERIES_LIMIT = np.pi / 10.0


def kresolvent_kernel(x, y, z, beta, gamma, lam: float, k: int, d44: float) -> np.ndarray:
    """k-step resolvent of the Heisenberg-approximated completion process (a3 = 1)."""
    if k < 1:
        raise ValueError(f"Unsupported iteration count k={k}")
    x, y, z, beta, gamma = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                                 for v in (x, y, z, beta, gamma)))
    positive = z > 0
    zs = np.where(positive, z, 1.0)
    log_value = (np.log(3.0 / (4.0 * (d44 * np.pi) ** 2)) + k * np.log(lam)
                 + (k - 5) * np.log(zs) - gammaln(k) - lam * zs
                 - (12.0 * (x - 0.5 * zs * beta) ** 2 + zs ** 2 * beta ** 2) / (4.0 * zs ** 3 * d44)
                 - (12.0 * (y + 0.5 * zs * gamma) ** 2 + zs ** 2 * gamma ** 2) / (4.0 * zs ** 3 * d44))
    return np.where(positive, np.exp(log_value), 0.0)


def _half_angle_ratio(theta: np.ndarray) -> np.ndarray:
    """(theta/2)/tan(theta/2)."""
    small = np.abs(theta) < SE2_SERIES_LIMIT
    half = np.where(small, 1.0, theta / 2.0)
    return np.where(small, np.cos(theta / 2.0) / (1.0 - theta ** 2 / 24.0), half / np.tan(half))


def se2_kernel_estimate(x, y, theta, t: float, d33: float, d44: float, c: float = 1.0) -> np.ndarray:
    x, y, theta = (np.asarray(v, dtype=float) for v in (x, y, theta))
    s = _half_angle_ratio(theta)
    first = theta ** 2 / d44 + (theta * y / 2.0 + s * x) ** 2 / d33
    second = (-x * theta / 2.0 + s * y) ** 2 / (d44 * d33)
    return np.exp(-np.sqrt(first ** 2 + second) / (4.0 * t * c * c)) / (4.0 * np.pi * t * t * d44 * d33)


def enhancement_normalization(t: float, d33: float, d44: float) -> float:
    """Closed-form normalization constant of the enhancement product.

    Only approximate: at t = D33 = 1 the kernel mass is about 0.85 for
    D44 = 0.01 and about 1.5 for D44 = 0.04, so the 20% band around unit
    mass holds for D44 up to roughly 0.02. Use enhancement_mass (or
    KernelSpec.normalize) when unit mass matters.
    """
    return (1.0 / (8.0 * np.sqrt(2.0))) * np.sqrt(np.pi) * t * np.sqrt(t * d33) * np.sqrt(d33 * d44)


_MASS_CACHE: Dict[tuple, float] = {}


def enhancement_mass(t: float, d33: float, d44: float, c: float = 1.0, samples: int = 161) -> float:
    """Integral of enhancement_kernel over R^3 x S^2 by quadrature.

    In second-chart angles the area element is cos(beta) dbeta dgamma and
    the kernel factorizes per axial slice z into an (x, beta) and a
    (y, gamma) integral.
    """
    key = (float(t), float(d33), float(d44), float(c), int(samples))
    if key in _MASS_CACHE:
        return _MASS_CACHE[key]
    axial = 6.0 * c * np.sqrt(8.0 * t * d33)
    lateral = axial / 2.0 + 20.0 * 4.0 * t * c * c * np.sqrt(d33 * d44)
    z, dz = np.linspace(-axial, axial, samples, retstep=True)
    x, dx = np.linspace(-lateral, lateral, int(1.5 * samples), retstep=True)
    beta, d_beta = np.linspace(-np.pi / 2.0, np.pi / 2.0, int(0.75 * samples), retstep=True)
    gamma, d_gamma = np.linspace(-np.pi, np.pi, int(1.5 * samples), retstep=True)
    X, B = np.meshgrid(x, beta[1:-1], indexing='ij')
    Y, G = np.meshgrid(x, gamma, indexing='ij')
    weight = np.cos(B)
    total = 0.0
    for zk in z:
        first = np.sum(se2_kernel_estimate(zk / 2.0, X, B, t, d33, d44, c) * weight) * dx * d_beta
        second = np.sum(se2_kernel_estimate(zk / 2.0, Y, G, t, d33, d44, c)) * dx * d_gamma
        total += first * second * dz
    mass = float(enhancement_normalization(t, d33, d44) * total)
    logger.debug(f"Enhancement kernel mass {mass:.4f} (t={t}, D33={d33}, D44={d44}, c={c})")
    _MASS_CACHE[key] = mass
    return mass


def enhancement_kernel(x, y, z, beta, gamma, t: float, d33: float, d44: float,
                       c: float = 1.0) -> np.ndarray:
    """Direct product of two SE(2) estimates; zero outside the second chart."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    inside = np.isfinite(beta) & np.isfinite(gamma) & (np.abs(beta) < np.pi / 2.0)
    b = np.where(inside, beta, 0.0)
    g = np.where(inside, gamma, 0.0)
    value = (enhancement_normalization(t, d33, d44)
             * se2_kernel_estimate(np.asarray(z) / 2.0, x, b, t, d33, d44, c)
             * se2_kernel_estimate(np.asarray(z) / 2.0, -np.asarray(y), g, t, d33, d44, c))
    return np.where(inside, value, 0.0)


def gaussian_estimate_kernel(y: np.ndarray, n: np.ndarray, t: float, d33: float, d44: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    coefficients = log_coefficients(y, rotation_onto_batch(n), strict=False)
    valid = np.all(np.isfinite(coefficients), axis=-1)
    modulus = weighted_modulus_coefficients(np.where(valid[..., None], coefficients, 0.0), d33, d44)
    prefactor = (1.0 / (4.0 * np.pi * t * t * d33 * d44)) ** 2
    return np.where(valid, prefactor * np.exp(-modulus / (4.0 * t)), 0.0)


def kernel_function(spec: KernelSpec) -> KernelFunction:
    """Kernel of the given kind as a function of (y, n)."""
    if spec.kind == 'gaussian-estimate':
        def kernel(y, n):
            return gaussian_estimate_kernel(y, n, spec.t, spec.d33, spec.d44)
        return kernel

    scale = 1.0
    if spec.kind == 'enhancement-product' and spec.normalize:
        scale = 1.0 / enhancement_mass(spec.t, spec.d33, spec.d44, spec.se2_constant)

    def kernel(y, n):
        y = np.asarray(y, dtype=float)
        beta, gamma = angles_from_normal_batch(n, strict=False)
        if spec.kind == 'completion-heisenberg-kstep':
            inside = np.isfinite(beta) & (np.abs(np.nan_to_num(beta, nan=np.pi)) < np.pi / 2.0)
            b = np.where(inside, beta, 0.0)
            g = np.where(inside, gamma, 0.0)
            value = kresolvent_kernel(y[..., 0], y[..., 1], y[..., 2], b, g, spec.lam, spec.k, spec.d44)
            return np.where(inside, value, 0.0)
        return scale * enhancement_kernel(y[..., 0], y[..., 1], y[..., 2], beta, gamma,
                                          spec.t, spec.d33, spec.d44, spec.se2_constant)
    return kernel


# ---------------------------------------------------------------------------
# Morphological kernels
# ---------------------------------------------------------------------------

def _weighted(numerator: np.ndarray, d: float) -> np.ndarray:
    """numerator / d, where a zero coefficient forbids any motion along that direction."""
    if d > 0:
        return numerator / d
    return np.where(numerator > 1e-24, np.inf, 0.0)


def morph_norm(coefficients: np.ndarray, d11: float, d44: float) -> np.ndarray:
    """sqrt(((|c1|^2 + |c2|^2)/D11 + (|c4|^2 + |c5|^2)/D44)^2 + |c3|^2/(D11 D44)).

    Quadratic in the lateral and angular coefficients, so at eta = 1 the
    kernel reduces to the Hopf-Lax cost of W_t = -1/2 sum_i D_ii (A_i W)^2.
    """
    c = coefficients
    lateral = _weighted(c[..., 0] ** 2 + c[..., 1] ** 2, d11)
    angular = _weighted(c[..., 3] ** 2 + c[..., 4] ** 2, d44)
    axial = _weighted(c[..., 2] ** 2, d11 * d44)
    return np.sqrt((lateral + angular) ** 2 + axial)


def morph_kernel(y: np.ndarray, n: np.ndarray, t: float, params: MorphParams,
                 section: str = 'rotation') -> np.ndarray:
    """Erosion kernel k_t^+ (non-negative); the dilation kernel is its negative.

    `section` picks the rotation representing n: 'rotation' uses R_n from
    rotation_onto, 'chart2' the second-chart rotation with alpha = 0.
    """
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    if section == 'rotation':
        coefficients = log_coefficients(y, rotation_onto_batch(n), strict=False)
    elif section == 'chart2':
        beta, gamma = angles_from_normal_batch(n)
        coefficients = log_section_coefficients(y, beta, gamma)
    else:
        raise ValueError(f"Unsupported kernel section: {section}")
    valid = np.all(np.isfinite(coefficients), axis=-1)
    rho = morph_norm(np.where(valid[..., None], coefficients, 0.0), params.d11, params.d44)
    eta, C = params.eta, params.constant
    if t <= 0:
        return np.where(valid & (rho == 0.0), 0.0, np.inf)
    if eta == 0.5:
        value = np.where(rho <= t * t, 0.0, np.inf)
    else:
        p = 1.0 / (2.0 * eta - 1.0)
        with np.errstate(over='ignore', invalid='ignore'):
            value = ((2.0 * eta - 1.0) / (2.0 * eta)) * C ** (2.0 * eta * p) * rho ** (eta * p) / t ** p
        value = np.where(np.isinf(rho), np.inf, value)
    return np.where(valid, value, np.inf)


def angular_log_norm(beta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """(c4)^2 + (c5)^2 of the second-chart logarithm at y = 0."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    c = log_section_coefficients(np.zeros(np.broadcast(beta, gamma).shape + (3,)), beta, gamma)
    return c[..., 3] ** 2 + c[..., 4] ** 2


def kernel_accuracy_m(beta, gamma, step: float = 1e-6) -> np.ndarray:
    """Ratio of |A4 k|^2 + |A5 k|^2 to d/dt k for the angular erosion kernel.

    Equals 1 where the kernel solves the Hamilton-Jacobi equation exactly;
    the 0/0 at the origin is replaced by its limit 1.
    """
    beta, gamma = np.broadcast_arrays(np.asarray(beta, dtype=float), np.asarray(gamma, dtype=float))
    f = angular_log_norm(beta, gamma)
    d_beta = (angular_log_norm(beta + step, gamma) - angular_log_norm(beta - step, gamma)) / (2.0 * step)
    d_gamma = (angular_log_norm(beta, gamma + step) - angular_log_norm(beta, gamma - step)) / (2.0 * step)
    origin = (beta == 0.0) & (gamma == 0.0)
    safe = np.where(origin, 1.0, f)
    m = 0.25 * (d_beta ** 2 + d_gamma ** 2 / np.cos(beta) ** 2) / safe
    return np.where(origin, 1.0, m)
