import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src.models.field import OrientationField
from src.models.params import MorphParams
from src.utils.left_invariant import LeftInvariantOperators

logger = logging.getLogger(__name__)

EROSION = -1
DILATION = 1

_MODE_SIGNS = {'erosion': EROSION, 'dilation': DILATION}


class MorphologyEvolution:
    """Upwind solver of the left-invariant Hamilton-Jacobi equations.

    W_t = -+ (1/2eta) (D11(|A1 W|^2 + |A2 W|^2) + D44(|A4 W|^2 + |A5 W|^2))^eta,
    minus for erosion and plus for dilation. One-sided differences are
    chosen Rouy-Tourin style: the side that points upwind for the moving
    front, or neither when both point away.
    """

    def __init__(self, params: MorphParams, angular_step: Optional[float] = None,
                 progress: bool = True):
        self.params = params
        self.angular_step = angular_step
        self.progress = progress
        self._cache: Dict[tuple, LeftInvariantOperators] = {}

    def clear_cache(self):
        self._cache.clear()

    def operators_for(self, U: OrientationField) -> LeftInvariantOperators:
        key = (id(U.tessellation), U.dims, U.spacing)
        if key not in self._cache:
            self._cache[key] = LeftInvariantOperators.for_field(
                U, angular_step=self.angular_step, boundary=self.params.boundary)
        return self._cache[key]

    def _terms(self) -> Sequence[Tuple[int, float]]:
        p = self.params
        return [(i, p.d11) for i in (1, 2) if p.d11 > 0] + [(i, p.d44) for i in (4, 5) if p.d44 > 0]

    def _hamiltonian(self, ops: LeftInvariantOperators, w: np.ndarray, sign: int,
                     terms: Sequence[Tuple[int, object]]) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (sum D Dx^2, sum D Dx / h) over the given generators."""
        total = np.zeros_like(w)
        slope = np.zeros_like(w)
        for i, d in terms:
            dx = ops.upwind(i, w, sign)
            total += d * dx * dx
            slope += d * dx / ops.step_for(i)
        return total, slope

    def _rate(self, total: np.ndarray, slope: np.ndarray) -> float:
        eta = self.params.eta
        active = total > 0
        if not np.any(active):
            return 0.0
        return float(np.max(total[active] ** (eta - 1.0) * slope[active]))

    def hj_stable_dt(self, W: OrientationField, mode: Optional[str] = None) -> float:
        """Largest step for which the explicit upwind update stays monotone at W."""
        ops = self.operators_for(W)
        sign = _MODE_SIGNS[mode or self.params.mode]
        rate = self._rate(*self._hamiltonian(ops, W.data.ravel(), sign, self._terms()))
        return math.inf if rate == 0 else 1.0 / rate

    def upwind_step(self, W: OrientationField, dt: Optional[float] = None,
                    mode: Optional[str] = None) -> OrientationField:
        ops = self.operators_for(W)
        sign = _MODE_SIGNS[mode or self.params.mode]
        dt = self.params.dt if dt is None else dt
        w = W.data.ravel()
        total, _ = self._hamiltonian(ops, w, sign, self._terms())
        eta = self.params.eta
        return W.with_data(w + sign * dt / (2.0 * eta) * total ** eta, signed=True)

    def _run(self, U: OrientationField, mode: str) -> OrientationField:
        p = self.params
        step, steps = _step_count(p.t, p.dt)
        ops = self.operators_for(U)
        sign = _MODE_SIGNS[mode]
        terms = self._terms()
        eta = p.eta
        w = U.data.ravel().copy()
        substeps = 0
        for _ in tqdm(range(steps), desc=mode, disable=not self.progress):
            total, slope = self._hamiltonian(ops, w, sign, terms)
            rate = self._rate(total, slope)
            n = max(1, int(math.ceil(step * rate - 1e-12)))
            dt = step / n
            for k in range(n):
                if k > 0:
                    total, _ = self._hamiltonian(ops, w, sign, terms)
                w = w + sign * dt / (2.0 * eta) * total ** eta
            substeps += n
        logger.info(f"{mode.capitalize()}: t={p.t}, {steps} steps ({substeps} substeps), eta={eta}")
        return U.with_data(w, signed=True)

    def run(self, U: OrientationField) -> OrientationField:
        try:
            return self._run(U, self.params.mode)
        except Exception as e:
            logger.error(f"Error in morphological evolution: {str(e)}", exc_info=True)
            raise

    def run_erosion(self, U: OrientationField) -> OrientationField:
        return self._run(U, 'erosion')

    def run_dilation(self, U: OrientationField) -> OrientationField:
        return self._run(U, 'dilation')

    def run_adaptive_erosion(self, U: OrientationField) -> OrientationField:
        """Angular erosion where Laplace-Beltrami W exceeds the threshold c, dilation below it.

        The local coefficient is D44 |Laplace-Beltrami W - c|^exponent.
        """
        p = self.params
        try:
            step, steps = _step_count(p.t, p.dt)
            ops = self.operators_for(U)
            eta = p.eta
            w = U.data.ravel().copy()
            for _ in tqdm(range(steps), desc='adaptive erosion', disable=not self.progress):
                s = ops.laplace_beltrami(w.reshape(U.data.shape)).ravel() - p.threshold
                coefficient = p.d44 * np.abs(s) ** p.adaptive_exponent
                eroding = s > 0
                terms = [(i, coefficient) for i in (4, 5)]
                total_e, slope_e = self._hamiltonian(ops, w, EROSION, terms)
                total_d, slope_d = self._hamiltonian(ops, w, DILATION, terms)
                total = np.where(eroding, total_e, total_d)
                slope = np.where(eroding, slope_e, slope_d)
                direction = np.where(eroding, EROSION, np.where(s < 0, DILATION, 0))
                rate = self._rate(total, slope)
                n = max(1, int(math.ceil(step * rate - 1e-12)))
                for k in range(n):
                    if k > 0:
                        total_e, _ = self._hamiltonian(ops, w, EROSION, terms)
                        total_d, _ = self._hamiltonian(ops, w, DILATION, terms)
                        total = np.where(eroding, total_e, total_d)
                    w = w + direction * (step / n) / (2.0 * eta) * total ** eta
            logger.info(f"Adaptive erosion: t={p.t}, threshold={p.threshold}, {steps} steps")
            return U.with_data(w, signed=True)
        except Exception as e:
            logger.error(f"Error in adaptive erosion: {str(e)}", exc_info=True)
            raise


def _step_count(t: float, dt: float) -> Tuple[float, int]:
    if t == 0:
        return dt, 0
    ratio = t / dt
    steps = int(round(ratio))
    if steps >= 1 and abs(ratio - steps) < 1e-9:
        return dt, steps
    steps = int(math.ceil(ratio))
    logger.warning(f"t={t} is not a multiple of dt={dt}; using {steps} steps of {t / steps:.6g}")
    return t / steps, steps
