"""Rigid-motion arithmetic on SE(3) and its quotient R^3 x| S^2.

A group element is a pair g = (x, R) with product (x, R)(x', R') = (x + R x', R R').
Lie algebra coefficients are ordered (c1, c2, c3, c4, c5, c6): the first
three are spatial velocities along the moving frame, the last three are angular
velocities about it. A3 points along the local fiber direction R e_z.

All batch helpers accept arrays with leading batch axes so kernels and random
walks can stay vectorized; the dataclass wrappers cover single elements.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.models.errors import AngleOutOfBranch, ChartSingularity

logger = logging.getLogger(__name__)

# Below this rotation angle the sin/cos quotients switch to Taylor series.
SMALL_ANGLE_EPSILON: float = 1e-6

# The logarithm refuses rotation angles within this distance of pi.
BRANCH_EPSILON: float = 1e-6

# Distance to a chart singularity below which conversions raise.
CHART_EPSILON: float = 1e-6

E_X = np.array([1.0, 0.0, 0.0])
E_Y = np.array([0.0, 1.0, 0.0])
E_Z = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# Small batch linear algebra
# ---------------------------------------------------------------------------

def hat(v: np.ndarray) -> np.ndarray:
    """Skew matrix of a (..., 3) array, so that hat(v) @ x = v x x."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(S: np.ndarray) -> np.ndarray:
    """Axial vector of the antisymmetric part of a (..., 3, 3) array."""
    S = np.asarray(S, dtype=float)
    return 0.5 * np.stack([
        S[..., 2, 1] - S[..., 1, 2],
        S[..., 0, 2] - S[..., 2, 0],
        S[..., 1, 0] - S[..., 0, 1],
    ], axis=-1)


def matmul3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Written out elementwise so every batch entry is computed the same way
    # regardless of the batch it sits in.
    return (a[..., :, 0:1] * b[..., 0:1, :]
            + a[..., :, 1:2] * b[..., 1:2, :]
            + a[..., :, 2:3] * b[..., 2:3, :])


def matvec3(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (a[..., :, 0] * v[..., 0:1]
            + a[..., :, 1] * v[..., 1:2]
            + a[..., :, 2] * v[..., 2:3])


def rot_x(angle) -> np.ndarray:
    a = np.asarray(angle, dtype=float)
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = 1.0
    out[..., 1, 1], out[..., 1, 2] = c, -s
    out[..., 2, 1], out[..., 2, 2] = s, c
    return out


def rot_y(angle) -> np.ndarray:
    a = np.asarray(angle, dtype=float)
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 1, 1] = 1.0
    out[..., 0, 0], out[..., 0, 2] = c, s
    out[..., 2, 0], out[..., 2, 2] = -s, c
    return out


def rot_z(angle) -> np.ndarray:
    a = np.asarray(angle, dtype=float)
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 2, 2] = 1.0
    out[..., 0, 0], out[..., 0, 1] = c, -s
    out[..., 1, 0], out[..., 1, 1] = s, c
    return out


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LieVector:
    """Coefficients (c1..c6) with respect to the basis {A1..A6}."""
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float).reshape(6)
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError(f"Non-finite Lie coefficients: {self.coefficients}")

    @classmethod
    def from_parts(cls, spatial, angular) -> "LieVector":
        return cls(np.concatenate([np.asarray(spatial, float), np.asarray(angular, float)]))

    @property
    def spatial(self) -> np.ndarray:
        return self.coefficients[:3]

    @property
    def angular(self) -> np.ndarray:
        return self.coefficients[3:]

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.angular))

    def __getitem__(self, i: int) -> float:
        """1-based access matching the c^i naming."""
        return float(self.coefficients[i - 1])


@dataclass(eq=False)
class SE3Element:
    x: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(3)
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)

    @classmethod
    def identity(cls) -> "SE3Element":
        return cls(np.zeros(3), np.eye(3))

    @classmethod
    def from_matrix(cls, H: np.ndarray) -> "SE3Element":
        H = np.asarray(H, dtype=float)
        return cls(H[:3, 3], H[:3, :3])

    def as_matrix(self) -> np.ndarray:
        H = np.eye(4)
        H[:3, :3] = self.R
        H[:3, 3] = self.x
        return H

    @property
    def normal(self) -> np.ndarray:
        """Orientation R e_z of the coset this element represents."""
        return self.R[:, 2].copy()

    def act(self, point: np.ndarray) -> np.ndarray:
        return self.R @ np.asarray(point, dtype=float) + self.x

    def is_valid(self, tol: float = 1e-12) -> bool:
        return (np.allclose(self.R.T @ self.R, np.eye(3), atol=tol)
                and abs(np.linalg.det(self.R) - 1.0) <= tol)

    def __matmul__(self, other: "SE3Element") -> "SE3Element":
        return compose(self, other)


@dataclass(frozen=True)
class EulerAngles1:
    """First chart: R = R_z(gamma) R_y(beta) R_z(alpha), beta in [0, pi]."""
    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class EulerAngles2:
    """Second chart: R = R_x(gamma) R_y(beta) R_z(alpha)."""
    alpha: float
    beta: float
    gamma: float


# ---------------------------------------------------------------------------
# Group operations
# ---------------------------------------------------------------------------

def compose(g: SE3Element, h: SE3Element) -> SE3Element:
    return SE3Element(g.x + g.R @ h.x, g.R @ h.R)


def inverse(g: SE3Element) -> SE3Element:
    return SE3Element(-g.R.T @ g.x, g.R.T)


def _exp_series(theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """sin(t)/t, (1-cos t)/t^2 and (t-sin t)/t^3 with a Taylor branch near 0."""
    small = theta < SMALL_ANGLE_EPSILON
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - np.sin(t)) / (t * t * t))
    return a, b, c


def exp_coefficients(c: np.ndarray, t: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Batch exponential: (..., 6) coefficients -> translations (..., 3), rotations (..., 3, 3)."""
    c = np.asarray(c, dtype=float)
    v = t * c[..., :3]
    w = t * c[..., 3:]
    theta = np.linalg.norm(w, axis=-1)
    a, b, cc = _exp_series(theta)
    W = hat(w)
    W2 = matmul3(W, W)
    R = np.eye(3) + a[..., None, None] * W + b[..., None, None] * W2
    x = v + b[..., None] * matvec3(W, v) + cc[..., None] * matvec3(W2, v)
    return x, R


def exp_se3(c: LieVector, t: float = 1.0) -> SE3Element:
    x, R = exp_coefficients(c.coefficients, t)
    return SE3Element(x, R)


def _log_from_parts(x: np.ndarray, axial: np.ndarray, trace: np.ndarray,
                    strict: bool) -> np.ndarray:
    """Shared tail of both logarithms, given the axial vector of (R - R^T)/2 and tr R."""
    sin_q = np.linalg.norm(axial, axis=-1)
    cos_q = np.clip((trace - 1.0) / 2.0, -1.0, 1.0)
    q = np.arctan2(sin_q, cos_q)
    outside = q >= np.pi - BRANCH_EPSILON
    if strict and np.any(outside):
        raise AngleOutOfBranch(
            f"Rotation angle {float(np.max(q)):.9f} is outside the principal branch")
    small = q < SMALL_ANGLE_EPSILON
    qs = np.where(small | outside, 1.0, q)
    q2 = q * q
    ratio = np.where(small, 1.0 + q2 / 6.0 + 7.0 * q2 * q2 / 360.0, qs / np.sin(qs))
    omega = ratio[..., None] * axial
    half = qs / 2.0
    d = np.where(small, 1.0 / 12.0 + q2 / 720.0 + q2 * q2 / 30240.0,
                 (1.0 - half * np.cos(half) / np.sin(half)) / (qs * qs))
    wx = np.cross(omega, x)
    spatial = x - 0.5 * wx + d[..., None] * np.cross(omega, wx)
    out = np.concatenate([spatial, omega], axis=-1)
    if not strict:
        out = np.where(outside[..., None], np.nan, out)
    return out


def log_coefficients(x: np.ndarray, R: np.ndarray, strict: bool = True) -> np.ndarray:
    """Batch logarithm. With strict=False, elements outside the branch map to NaN."""
    x = np.asarray(x, dtype=float)
    R = np.asarray(R, dtype=float)
    trace = R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2]
    return _log_from_parts(x, vee(R), trace, strict)


def log_se3(g: SE3Element) -> LieVector:
    return LieVector(log_coefficients(g.x, g.R))


def _check_chart2(beta, gamma) -> None:
    limit = np.pi / 2.0 - CHART_EPSILON
    if np.any(np.abs(beta) >= limit) or np.any(np.abs(gamma) >= limit):
        raise ChartSingularity("Angles leave the second chart domain (|beta|, |gamma| < pi/2)")


def log_section_coefficients(y: np.ndarray, beta, gamma) -> np.ndarray:
    """Batch logarithm of (y, R_x(gamma) R_y(beta)) from the closed-form axial vector."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    _check_chart2(beta, gamma)
    cb, cg = np.cos(beta), np.cos(gamma)
    sb, sg = np.sin(beta), np.sin(gamma)
    axial = np.stack([
        sg * np.cos(beta / 2.0) ** 2,
        sb * np.cos(gamma / 2.0) ** 2,
        0.5 * sg * sb,
    ], axis=-1)
    trace = cb + cg + cg * cb
    return _log_from_parts(np.asarray(y, dtype=float), axial, trace, strict=True)


def log_section(y: np.ndarray, beta: float, gamma: float) -> LieVector:
    """Logarithm of the second-chart section with alpha = 0."""
    return LieVector(log_section_coefficients(y, beta, gamma))


# ---------------------------------------------------------------------------
# Orientations and charts
# ---------------------------------------------------------------------------

def rotation_onto_batch(n: np.ndarray) -> np.ndarray:
    """Rotations R_n with R_n e_z = n, built from the rational formula.

    The upper-left block is symmetric, so R_n is the rotation about e_z x n.
    At n = -e_z the formula degenerates; R_x(pi) is used there.
    """
    n = np.asarray(n, dtype=float)
    n1, n2, n3 = n[..., 0], n[..., 1], n[..., 2]
    rho2 = n1 * n1 + n2 * n2
    pole = rho2 < 1e-24
    r = np.where(pole, 1.0, rho2)
    R = np.empty(n.shape[:-1] + (3, 3))
    R[..., 0, 0] = (n2 * n2 + n1 * n1 * n3) / r
    R[..., 0, 1] = n1 * n2 * (n3 - 1.0) / r
    R[..., 1, 0] = R[..., 0, 1]
    R[..., 1, 1] = (n1 * n1 + n2 * n2 * n3) / r
    R[..., 0, 2] = n1
    R[..., 1, 2] = n2
    R[..., 2, 0] = -n1
    R[..., 2, 1] = -n2
    R[..., 2, 2] = n3
    flip = np.where(n3 < 0.0, -1.0, 1.0)
    at_pole = np.zeros_like(R)
    at_pole[..., 0, 0] = 1.0
    at_pole[..., 1, 1] = flip
    at_pole[..., 2, 2] = flip
    return np.where(pole[..., None, None], at_pole, R)


def rotation_onto(n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=float).reshape(3)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError(f"Expected a unit vector, got norm {np.linalg.norm(n)}")
    return rotation_onto_batch(n)


def normal_from_angles(beta, gamma) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    return np.stack([np.sin(beta), -np.cos(beta) * np.sin(gamma),
                     np.cos(beta) * np.cos(gamma)], axis=-1)


def angles_from_normal_batch(n: np.ndarray, strict: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Second-chart angles (beta, gamma) with gamma in [-pi/2, pi/2].

    Directions in the lower hemisphere get |beta| > pi/2. Near +-e_x the chart
    is singular; strict=False returns NaN there instead of raising.
    """
    n = np.asarray(n, dtype=float)
    n1, n2, n3 = n[..., 0], n[..., 1], n[..., 2]
    r = np.sqrt(n2 * n2 + n3 * n3)
    singular = r < CHART_EPSILON
    if strict and np.any(singular):
        raise ChartSingularity("Direction too close to +-e_x for the second chart")
    s = np.where(n3 < 0.0, -1.0, 1.0)
    gamma = np.arctan2(-n2 * s, n3 * s)
    beta = np.arctan2(n1, s * r)
    beta = np.where(beta >= np.pi, beta - 2.0 * np.pi, beta)
    if not strict:
        beta = np.where(singular, np.nan, beta)
        gamma = np.where(singular, np.nan, gamma)
    return beta, gamma


def angles_from_normal(n: np.ndarray) -> EulerAngles2:
    n = np.asarray(n, dtype=float).reshape(3)
    beta, gamma = angles_from_normal_batch(n)
    return EulerAngles2(0.0, float(beta), float(gamma))


def euler1_to_rotation(angles: EulerAngles1) -> np.ndarray:
    return rot_z(angles.gamma) @ rot_y(angles.beta) @ rot_z(angles.alpha)


def euler2_to_rotation(angles: EulerAngles2) -> np.ndarray:
    return rot_x(angles.gamma) @ rot_y(angles.beta) @ rot_z(angles.alpha)


def rotation_to_euler1(R: np.ndarray) -> EulerAngles1:
    R = np.asarray(R, dtype=float)
    sin_beta = np.hypot(R[0, 2], R[1, 2])
    if sin_beta < CHART_EPSILON:
        raise ChartSingularity("First chart is singular at beta in {0, pi}")
    beta = np.arctan2(sin_beta, R[2, 2])
    gamma = np.arctan2(R[1, 2], R[0, 2])
    alpha = np.arctan2(R[2, 1], -R[2, 0])
    return EulerAngles1(float(alpha), float(beta), float(gamma))


def rotation_to_euler2(R: np.ndarray) -> EulerAngles2:
    R = np.asarray(R, dtype=float)
    beta, gamma = angles_from_normal_batch(R[:, 2])
    cb = np.cos(beta)
    if abs(cb) < CHART_EPSILON:
        raise ChartSingularity("Second chart is singular at beta = +-pi/2")
    s = np.sign(cb)
    alpha = np.arctan2(-R[0, 1] * s, R[0, 0] * s)
    return EulerAngles2(float(alpha), float(beta), float(gamma))


# ---------------------------------------------------------------------------
# Weighted modulus
# ---------------------------------------------------------------------------

def weighted_modulus_coefficients(c: np.ndarray, d33: float, d44: float) -> np.ndarray:
    """Squared weighted modulus |g|^2 from (..., 6) logarithm coefficients."""
    if d33 <= 0 or d44 <= 0:
        raise ValueError(f"Weighted modulus needs D33, D44 > 0, got {d33}, {d44}")
    c = np.asarray(c, dtype=float)
    lateral = (c[..., 0] ** 2 + c[..., 1] ** 2) / (d33 * d44)
    twist = c[..., 5] ** 2 / d44
    horizontal = c[..., 2] ** 2 / d33 + (c[..., 3] ** 2 + c[..., 4] ** 2) / d44
    return np.sqrt(lateral + twist + horizontal ** 2)


def weighted_modulus(g: SE3Element, d33: float, d44: float) -> float:
    """|g|^2_{D33,D44}, the quantity entering the Gaussian kernel estimate."""
    return float(weighted_modulus_coefficients(log_se3(g).coefficients, d33, d44))
