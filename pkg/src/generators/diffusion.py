import logging
import math
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.stats import gamma as gamma_distribution
from tqdm import tqdm

from src.models.errors import AllZeroCoefficients, UnstableStep
from src.models.field import OrientationField
from src.models.params import DiffusionParams
from src.utils.left_invariant import LeftInvariantOperators

logger = logging.getLogger(__name__)

# Time quadratures stop once the remaining weight drops below this.
WEIGHT_CUTOFF = 1e-8


def stability_dt(params: DiffusionParams, h: float, h_a: float, convection: bool = True) -> float:
    """Gerschgorin bound 1 / (a3/h + (4 D11 + 2 D33)/h^2 + 4 D44/h_a^2) of the explicit scheme."""
    if h <= 0 or h_a <= 0:
        raise ValueError(f"Steps must be positive, got h={h}, h_a={h_a}")
    rate = (4.0 * params.d11 + 2.0 * params.d33) / h ** 2 + 4.0 * params.d44 / h_a ** 2
    if convection:
        rate += params.a3 / h
    if rate <= 0:
        raise AllZeroCoefficients("All diffusion and convection coefficients are zero")
    return 1.0 / rate


class DiffusionEvolution:
    """Explicit Euler evolutions of the linear left-invariant diffusions.

    Enhancement uses D11, D33 and D44; completion adds the upwind
    convection -a3 A3. Resolvents and k-step resolvents integrate the same
    Euler trajectory against exponential or Gamma distributed travel times.
    """

    def __init__(self, params: DiffusionParams, angular_step: Optional[float] = None,
                 conservative: bool = True, progress: bool = True):
        self.params = params
        self.angular_step = angular_step
        self.conservative = conservative
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

    # ------------------------------------------------------------------
    # Time stepping
    # ------------------------------------------------------------------

    def stable_dt(self, U: OrientationField, convection: bool = True) -> float:
        ops = self.operators_for(U)
        return stability_dt(self.params, ops.step, ops.angular_step, convection)

    def time_step(self, U: OrientationField, t: float, convection: bool = True) -> Tuple[float, int]:
        """Step size and count covering [0, t]; dt defaults to 0.9 of the stability bound."""
        bound = self.stable_dt(U, convection)
        dt = 0.9 * bound if self.params.dt is None else self.params.dt
        if dt > bound * (1.0 + 1e-12):
            raise UnstableStep(f"Time step {dt} exceeds the stability bound {bound:.6g}")
        if t == 0:
            return dt, 0
        ratio = t / dt
        steps = int(round(ratio))
        if steps >= 1 and abs(ratio - steps) < 1e-9:
            return dt, steps
        steps = int(math.ceil(ratio))
        adjusted = t / steps
        logger.warning(f"t={t} is not a multiple of dt={dt}; using {steps} steps of {adjusted:.6g}")
        return adjusted, steps

    def generator(self, U: OrientationField, convection: bool = True) -> sparse.csr_matrix:
        p = self.params
        return self.operators_for(U).assemble_generator(
            p.d11, p.d33, p.d44, p.a3 if convection else 0.0, conservative=self.conservative)

    def trajectory(self, U: OrientationField, Q: sparse.spmatrix, dt: float,
                   steps: Optional[int] = None) -> Iterator[np.ndarray]:
        """Yield W(0), W(dt), ... as flat arrays (unbounded when steps is None)."""
        w = U.data.ravel().copy()
        m = 0
        yield w
        while steps is None or m < steps:
            w = w + dt * (Q @ w)
            m += 1
            yield w

    def _evolve(self, U: OrientationField, Q: sparse.spmatrix, dt: float, steps: int,
                label: str) -> OrientationField:
        w = U.data.ravel().copy()
        for _ in tqdm(range(steps), desc=label, disable=not self.progress):
            w = w + dt * (Q @ w)
        return U.with_data(w)

    def run_enhancement(self, U: OrientationField) -> OrientationField:
        try:
            dt, steps = self.time_step(U, self.params.t, convection=False)
            logger.info(f"Enhancement: t={self.params.t}, dt={dt:.6g}, {steps} steps")
            Q = self.generator(U, convection=False)
            return self._evolve(U, Q, dt, steps, 'enhancement')
        except Exception as e:
            logger.error(f"Error in enhancement diffusion: {str(e)}", exc_info=True)
            raise

    def run_completion(self, U: OrientationField) -> OrientationField:
        if self.params.a3 <= 0:
            raise ValueError(f"Completion needs a positive a3, got {self.params.a3}")
        try:
            dt, steps = self.time_step(U, self.params.t)
            logger.info(f"Completion: a3={self.params.a3}, t={self.params.t}, dt={dt:.6g}, {steps} steps")
            return self._evolve(U, self.generator(U), dt, steps, 'completion')
        except Exception as e:
            logger.error(f"Error in completion: {str(e)}", exc_info=True)
            raise

    # ------------------------------------------------------------------
    # Resolvents
    # ------------------------------------------------------------------

    def resolvent(self, U: OrientationField, lam: float) -> OrientationField:
        """sum_m e^{-lam m dt}(1 - e^{-lam dt}) W(m dt), truncated at WEIGHT_CUTOFF.

        The weights are the exact geometric stopping probabilities. They sum
        to one and differ from the Riemann weights lam dt e^{-lam m dt} at
        O(dt^2) per step, so the two forms agree only to first order in dt.
        """
        if lam <= 0:
            raise ValueError(f"Resolvent rate must be positive, got {lam}")
        dt, _ = self.time_step(U, 0.0)
        q = math.exp(-lam * dt)
        steps = int(math.ceil(math.log(WEIGHT_CUTOFF) / math.log(q)))
        Q = self.generator(U)
        acc = np.zeros(U.size)
        weight = 1.0 - q
        for w in tqdm(self.trajectory(U, Q, dt, steps), total=steps + 1, desc='resolvent',
                      disable=not self.progress):
            acc += weight * w
            weight *= q
        logger.info(f"Resolvent lambda={lam}: {steps} steps of {dt:.6g}")
        return U.with_data(acc)

    def resolvent_direct(self, U: OrientationField, lam: float) -> OrientationField:
        """Solve (lam I - Q) w = lam u with a sparse direct solver."""
        if lam <= 0:
            raise ValueError(f"Resolvent rate must be positive, got {lam}")
        Q = self.generator(U)
        system = (lam * sparse.identity(U.size, format='csc') - Q).tocsc()
        return U.with_data(spsolve(system, lam * U.data.ravel()))

    def k_step(self, U: OrientationField, lam: float, k: int) -> OrientationField:
        if k < 1:
            raise ValueError(f"Unsupported iteration count k={k}")
        W = U
        for i in range(k):
            logger.debug(f"k-step resolvent iteration {i + 1}/{k}")
            W = self.resolvent(W, lam)
        return W

    def gamma_weighted(self, U: OrientationField, lam: float, k: int) -> OrientationField:
        """Trajectory weighted by the Gamma(k, lam) probability of each time bin [m dt, (m+1) dt)."""
        if lam <= 0 or k < 1:
            raise ValueError(f"Invalid Gamma parameters lambda={lam}, k={k}")
        dt, _ = self.time_step(U, 0.0)
        law = gamma_distribution(a=k, scale=1.0 / lam)
        steps = int(math.ceil(law.ppf(1.0 - WEIGHT_CUTOFF) / dt))
        edges = law.cdf(dt * np.arange(steps + 2))
        weights = np.diff(edges)
        Q = self.generator(U)
        acc = np.zeros(U.size)
        for m, w in enumerate(self.trajectory(U, Q, dt, steps)):
            acc += weights[m] * w
        return U.with_data(acc)

    # ------------------------------------------------------------------
    # Perona-Malik
    # ------------------------------------------------------------------

    def run_perona_malik(self, U: OrientationField) -> OrientationField:
        """Adaptive diffusion A3(D33 exp(-|A3 W|^2/K^2) A3 W) plus the linear D11/D44 parts."""
        p = self.params
        if p.contrast is None:
            raise ValueError("Perona-Malik diffusion needs a contrast parameter K")
        try:
            ops = self.operators_for(U)
            dt, steps = self.time_step(U, p.t, convection=False)
            h2 = ops.step ** 2
            plus, minus = ops.shift_matrix(3, 1), ops.shift_matrix(3, -1)
            forward, backward = ops.derivative_matrix(3, 'f'), ops.derivative_matrix(3, 'b')
            linear = ops.assemble_generator(p.d11, 0.0, p.d44, 0.0, conservative=self.conservative)
            logger.info(f"Perona-Malik: K={p.contrast}, t={p.t}, dt={dt:.6g}, {steps} steps")
            w = U.data.ravel().copy()
            for _ in tqdm(range(steps), desc='perona-malik', disable=not self.progress):
                gradient = np.maximum(np.abs(forward @ w), np.abs(backward @ w))
                g = p.d33 * np.exp(-(gradient / p.contrast) ** 2)
                g_plus = 0.5 * (g + plus @ g)
                g_minus = 0.5 * (g + minus @ g)
                flux = (g_plus * (plus @ w - w) - g_minus * (w - minus @ w)) / h2
                w = w + dt * (flux + linear @ w)
            return U.with_data(w)
        except Exception as e:
            logger.error(f"Error in Perona-Malik diffusion: {str(e)}", exc_info=True)
            raise
