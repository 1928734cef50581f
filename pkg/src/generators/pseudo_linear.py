import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from tqdm import tqdm

from src.models.field import OrientationField
from src.models.params import PseudoParams
from src.generators.diffusion import DiffusionEvolution

logger = logging.getLogger(__name__)

# Below this |C| the grey-value maps use their first-order expansion.
SMALL_BALANCE = 1e-8


def chi(I, C: float) -> np.ndarray:
    """(e^{CI} - 1)/(e^C - 1), mapping [0, 1] onto itself."""
    I = np.asarray(I, dtype=float)
    if abs(C) < SMALL_BALANCE:
        return I + C * I * (I - 1.0) / 2.0
    return np.expm1(C * I) / np.expm1(C)


def chi_inv(I, C: float) -> np.ndarray:
    I = np.asarray(I, dtype=float)
    if abs(C) < SMALL_BALANCE:
        return I - C * I * (I - 1.0) / 2.0
    return np.log1p(np.expm1(C) * I) / C


def _normalize(U: OrientationField) -> Tuple[np.ndarray, float, float]:
    lo, hi = float(U.data.min()), float(U.data.max())
    span = hi - lo
    if span == 0:
        return np.zeros_like(U.data), lo, hi
    return (U.data - lo) / span, lo, hi


class PseudoLinearEvolution:
    """Diffusion combined with C-weighted squared-gradient dilation.

    Two routes to the same scale space: conjugating linear diffusion with
    the grey-value map chi_C, or stepping the non-linear equation
    V_t = sum D_ii A_i^2 V + C sum D_ii (A_i V)^2 directly.
    """

    def __init__(self, params: PseudoParams, angular_step: Optional[float] = None,
                 progress: bool = True):
        self.params = params
        self.diffusion = DiffusionEvolution(params.diffusion, angular_step=angular_step,
                                            progress=progress)
        self.progress = progress

    def run_conjugated(self, U: OrientationField) -> OrientationField:
        C = self.params.balance
        try:
            I, lo, hi = _normalize(U)
            if hi == lo:
                return U.copy()
            evolved = self.diffusion.run_enhancement(U.with_data(chi(I, C)))
            V = chi_inv(np.clip(evolved.data, 0.0, 1.0), C)
            logger.info(f"Pseudo-linear (conjugated): C={C}, range [{lo:.4g}, {hi:.4g}]")
            return U.with_data(lo + (hi - lo) * V)
        except Exception as e:
            logger.error(f"Error in conjugated pseudo-linear evolution: {str(e)}", exc_info=True)
            raise

    def run_direct(self, U: OrientationField) -> OrientationField:
        """Step the non-linear equation on the normalized field.

        The squared gradients use the discrete chain rule: with Q the diffusion
        generator, V' = Q(e^{CV} - 1) / (C e^{CV}), which couples each pair of
        neighbours through q_ij (e^{C(v_j - v_i)} - 1) / C. Steps are subdivided
        until dt * max_i sum_j q_ij e^{C(v_j - v_i)} <= 1, the monotonicity limit.
        """
        C = self.params.balance
        d = self.params.diffusion
        try:
            I, lo, hi = _normalize(U)
            if hi == lo:
                return U.copy()
            field = U.with_data(I)
            dt, steps = self.diffusion.time_step(field, d.t, convection=False)
            Q = self.diffusion.generator(field, convection=False).tocsr()
            exchange = Q - sparse.diags(Q.diagonal())
            v = I.ravel().copy()
            substeps = 0
            for _ in tqdm(range(steps), desc='pseudo-linear', disable=not self.progress):
                n = 1
                if abs(C) >= SMALL_BALANCE:
                    e = np.exp(C * (v - (v.max() if C > 0 else v.min())))
                    rate = float(np.max((exchange @ e) / e))
                    n = max(1, int(math.ceil(dt * rate - 1e-12)))
                for _ in range(n):
                    v = v + (dt / n) * _chain_rule_update(Q, v, C)
                substeps += n
            logger.info(f"Pseudo-linear (direct): C={C}, {steps} steps ({substeps} substeps)")
            return U.with_data(lo + (hi - lo) * v)
        except Exception as e:
            logger.error(f"Error in direct pseudo-linear evolution: {str(e)}", exc_info=True)
            raise


def _chain_rule_update(Q: sparse.spmatrix, v: np.ndarray, C: float) -> np.ndarray:
    if abs(C) < SMALL_BALANCE:
        return Q @ v
    return (Q @ np.expm1(C * v)) / (C * np.exp(C * v))
