"""
Projected-Newton solver for box-constrained, strictly convex quadratic programs.

    minimize 0.5 x'Hx + g'x   subject to   lower <= x <= upper

Used for control limits in the step gains and for the nonnegative mode
durations in the switching-time parameter gain.
"""
import enum
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ShapeError
from .linalg import spd_factor, spd_solve

logger = logging.getLogger(__name__)

# a component is at a bound when within AT_BOUND_RTOL * (1 + |bound|) of it
AT_BOUND_RTOL = 1e-12
ARMIJO = 0.1
STEP_DECREASE = 0.5
MIN_STEP = 1e-22


class BoxQPStatus(str, enum.Enum):
    CONVERGED = 'converged'
    MAX_ITER = 'max_iter'
    # the projected line search found no decrease before the tolerance was met
    NO_DESCENT = 'no_descent'


@dataclass(frozen=True)
class Bounds:
    """Componentwise box ``lower <= v <= upper``; infinite entries are allowed."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise ShapeError(f"bounds have shapes {lower.shape} and {upper.shape}")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    @classmethod
    def nonnegative(cls, size):
        return cls(np.zeros(size), np.full(size, np.inf))

    @classmethod
    def symmetric(cls, limit, size=None):
        limit = np.abs(np.asarray(limit, dtype=float))
        if size is not None:
            limit = np.broadcast_to(limit, (size,))
        return cls(-limit, limit)

    @property
    def size(self):
        return self.lower.size

    def shifted(self, nominal):
        """Bounds on a step ``delta`` such that ``nominal + delta`` stays inside."""
        nominal = np.asarray(nominal, dtype=float)
        return Bounds(self.lower - nominal, self.upper - nominal)

    def clip(self, values):
        return np.clip(values, self.lower, self.upper)

    def contains(self, values, atol=0.0):
        values = np.asarray(values, dtype=float)
        return bool(np.all(values >= self.lower - atol) and np.all(values <= self.upper + atol))


@dataclass(frozen=True)
class BoxQP:
    H: np.ndarray
    g: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        g = np.asarray(self.g, dtype=float).reshape(-1)
        n = g.size
        if H.shape != (n, n):
            raise ShapeError(f"H has shape {H.shape}, expected ({n}, {n})")
        bounds = Bounds(self.lower, self.upper)
        if bounds.size != n:
            raise ShapeError(f"bounds have size {bounds.size}, expected {n}")
        object.__setattr__(self, 'H', H)
        object.__setattr__(self, 'g', g)
        object.__setattr__(self, 'lower', bounds.lower)
        object.__setattr__(self, 'upper', bounds.upper)
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float).reshape(-1)
            if not bounds.contains(x0):
                raise ValueError("x0 must satisfy lower <= x0 <= upper")
            object.__setattr__(self, 'x0', x0)

    def objective(self, x):
        return float(self.g @ x + 0.5 * x @ self.H @ x)


@dataclass(frozen=True)
class BoxQPResult:
    x: np.ndarray
    free: np.ndarray
    factor: object
    status: BoxQPStatus
    iterations: int
    value: float

    @property
    def clamped(self):
        return ~self.free


def clamped_mask(x, grad, lower, upper):
    """
    Components held at a bound by a gradient pointing out of the box.

    A component at a bound with zero gradient counts as free.
    """
    at_lower = x <= lower + AT_BOUND_RTOL * (1.0 + np.abs(lower))
    at_upper = x >= upper - AT_BOUND_RTOL * (1.0 + np.abs(upper))
    at_lower &= np.isfinite(lower)
    at_upper &= np.isfinite(upper)
    return (at_lower & (grad > 0)) | (at_upper & (grad < 0))


def projected_gradient(x, grad, lower, upper):
    pg = grad.copy()
    pg[clamped_mask(x, grad, lower, upper)] = 0.0
    return pg


def solve_boxqp(problem, tol=1e-9, max_iter=100):
    """
    Solve ``problem`` by projected Newton with Armijo backtracking.

    Returns the minimizer, the mask of free components, the Cholesky factor
    of ``H`` restricted to the free block and the status. ``tol`` bounds the
    projected-gradient norm relative to ``max(1, |g|_inf)``.
    """
    H, g, lower, upper = problem.H, problem.g, problem.lower, problem.upper
    n = g.size
    if n == 0:
        return BoxQPResult(np.zeros(0), np.zeros(0, dtype=bool), None, BoxQPStatus.CONVERGED, 0, 0.0)

    start = problem.x0 if problem.x0 is not None else np.zeros(n)
    x = np.clip(start, lower, upper)
    value = problem.objective(x)
    threshold = tol * max(1.0, float(np.max(np.abs(g))))

    factor, free = None, None
    iterations = 0
    stalled = False
    for iterations in range(1, max_iter + 1):
        grad = g + H @ x
        clamped = clamped_mask(x, grad, lower, upper)
        if free is None or np.any(free != ~clamped):
            free = ~clamped
            factor = spd_factor(H[np.ix_(free, free)], block='qp')
        if np.linalg.norm(projected_gradient(x, grad, lower, upper)) <= threshold or not free.any():
            break

        # Newton point of the free subspace with clamped components held
        rhs = g[free] + H[np.ix_(free, clamped)] @ x[clamped]
        search = np.zeros(n)
        search[free] = -spd_solve(factor, rhs) - x[free]
        slope = float(search @ grad)
        if slope >= 0:
            stalled = True
            break

        step = 1.0
        candidate = np.clip(x + step * search, lower, upper)
        candidate_value = problem.objective(candidate)
        while candidate_value - value > ARMIJO * step * slope:
            step *= STEP_DECREASE
            if step < MIN_STEP:
                break
            candidate = np.clip(x + step * search, lower, upper)
            candidate_value = problem.objective(candidate)
        if step < MIN_STEP:
            logger.debug("box-QP line search stalled at iteration %d", iterations)
            stalled = True
            break
        x, value = candidate, candidate_value

    grad = g + H @ x
    clamped = clamped_mask(x, grad, lower, upper)
    if np.any(free != ~clamped):
        free = ~clamped
        factor = spd_factor(H[np.ix_(free, free)], block='qp')
    converged = np.linalg.norm(projected_gradient(x, grad, lower, upper)) <= threshold
    if converged:
        status = BoxQPStatus.CONVERGED
    elif stalled:
        status = BoxQPStatus.NO_DESCENT
    else:
        status = BoxQPStatus.MAX_ITER
    return BoxQPResult(x=x, free=free, factor=factor, status=status, iterations=iterations, value=value)
