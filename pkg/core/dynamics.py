"""
Parameterized dynamics and cost models.

Everything downstream (backward pass, solver, estimation, switching-time
optimization) consumes the types defined here:

* :class:`ParameterizedModel` -- ``x' = F(x, u; theta)`` with optional analytic
  derivatives,
* :class:`CostModel` -- running cost ``L(x, u; theta, t)`` and terminal cost
  ``phi(x; theta)``,
* :class:`Trajectory` -- a dynamically consistent rollout and its cost.

Derivatives that a model does not supply are obtained from the central
finite-difference oracles ``fd_dynamics_derivatives`` / ``fd_cost_derivatives``.
Continuous-time vector fields are turned into discrete models by fixed-step
Euler or RK4 substeps (``substep_integrate``, ``discretize``).

Timesteps are 0-based: ``states[t + 1] = step(states[t], controls[t], theta, t)``.
"""
import enum
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import DerivativeProbeFailed, DivergedRollout, NonFiniteDerivative, ShapeError

logger = logging.getLogger(__name__)

FD_REL_STEP = 1e-6
FD_SECOND_REL_STEP = 1e-4
# duration / dt_max within this of an integer does not add a substep
SUBSTEP_TOLERANCE = 1e-9


class Integrator(str, enum.Enum):
    EULER = 'euler'
    RK4 = 'rk4'


@dataclass
class DynamicsDerivatives:
    """
    First derivatives of ``F`` and, optionally, its second-derivative tensors.

    Tensors are indexed ``[output, a, b]``: ``Fxu[i, j, k] = d2 F_i / dx_j du_k``.
    """
    Fx: np.ndarray
    Fu: np.ndarray
    Ftheta: np.ndarray
    Fxx: Optional[np.ndarray] = None
    Fxu: Optional[np.ndarray] = None
    Fuu: Optional[np.ndarray] = None
    Fxtheta: Optional[np.ndarray] = None
    Futheta: Optional[np.ndarray] = None
    Fthetatheta: Optional[np.ndarray] = None

    @property
    def has_second_order(self):
        return self.Fxx is not None

    def check(self, n_x, n_u, n_theta, timestep=None):
        expected = {
            'Fx': (n_x, n_x), 'Fu': (n_x, n_u), 'Ftheta': (n_x, n_theta),
        }
        if self.has_second_order:
            expected.update({
                'Fxx': (n_x, n_x, n_x), 'Fxu': (n_x, n_x, n_u), 'Fuu': (n_x, n_u, n_u),
                'Fxtheta': (n_x, n_x, n_theta), 'Futheta': (n_x, n_u, n_theta),
                'Fthetatheta': (n_x, n_theta, n_theta),
            })
        _check_blocks(self, expected, timestep)
        return self


@dataclass
class CostDerivatives:
    """Second-order expansion of the running cost about ``(x, u, theta)``."""
    L0: float
    Lx: np.ndarray
    Lu: np.ndarray
    Ltheta: np.ndarray
    Lxx: np.ndarray
    Lxu: np.ndarray
    Lxtheta: np.ndarray
    Luu: np.ndarray
    Lutheta: np.ndarray
    Lthetatheta: np.ndarray

    @property
    def Lux(self):
        return self.Lxu.T

    def check(self, n_x, n_u, n_theta, timestep=None):
        _check_blocks(self, {
            'Lx': (n_x,), 'Lu': (n_u,), 'Ltheta': (n_theta,),
            'Lxx': (n_x, n_x), 'Lxu': (n_x, n_u), 'Lxtheta': (n_x, n_theta),
            'Luu': (n_u, n_u), 'Lutheta': (n_u, n_theta), 'Lthetatheta': (n_theta, n_theta),
        }, timestep)
        if not np.isfinite(self.L0):
            raise NonFiniteDerivative(timestep)
        return self


@dataclass
class TerminalCostDerivatives:
    phi0: float
    phix: np.ndarray
    phitheta: np.ndarray
    phixx: np.ndarray
    phixtheta: np.ndarray
    phithetatheta: np.ndarray

    def check(self, n_x, n_theta, timestep=None):
        _check_blocks(self, {
            'phix': (n_x,), 'phitheta': (n_theta,), 'phixx': (n_x, n_x),
            'phixtheta': (n_x, n_theta), 'phithetatheta': (n_theta, n_theta),
        }, timestep)
        if not np.isfinite(self.phi0):
            raise NonFiniteDerivative(timestep)
        return self


def _check_blocks(container, expected, timestep):
    for name, shape in expected.items():
        block = np.asarray(getattr(container, name))
        if block.shape != shape:
            raise ShapeError(f"{name} has shape {block.shape}, expected {shape}")
        if not np.all(np.isfinite(block)):
            raise NonFiniteDerivative(timestep, f"non-finite {name} at timestep {timestep}")


@dataclass(frozen=True)
class ParameterizedModel:
    """
    Discrete dynamics ``x_{t+1} = step(x_t, u_t, theta, t)``.

    ``step`` must be pure. ``jacobian`` returns first-order
    :class:`DynamicsDerivatives`; ``hessian`` returns them with the
    second-order tensors filled in. Missing callbacks fall back to central
    finite differences.
    """
    state_dim: int
    control_dim: int
    param_dim: int
    step: Callable
    jacobian: Optional[Callable] = None
    hessian: Optional[Callable] = None
    name: str = 'model'

    def __post_init__(self):
        if self.state_dim < 1:
            raise ValueError("state_dim must be positive")
        if self.control_dim < 0 or self.param_dim < 0:
            raise ValueError("control_dim and param_dim must be nonnegative")

    def derivatives(self, x, u, theta, t=0, second_order=False):
        if second_order:
            if self.hessian is not None:
                derivs = self.hessian(x, u, theta, t)
            else:
                derivs = fd_dynamics_derivatives(self, x, u, theta, t, second_order=True)
        elif self.jacobian is not None:
            derivs = self.jacobian(x, u, theta, t)
        else:
            derivs = fd_dynamics_derivatives(self, x, u, theta, t)
        return derivs.check(self.state_dim, self.control_dim, self.param_dim, t)


@dataclass(frozen=True)
class CostModel:
    """
    ``J = sum_t running(x_t, u_t, theta, t) + terminal(x_{T+1}, theta)``.

    ``running_derivatives(x, u, theta, t)`` returns :class:`CostDerivatives`,
    ``terminal_derivatives(x, theta)`` returns :class:`TerminalCostDerivatives`.
    """
    running: Callable
    terminal: Callable
    running_derivatives: Optional[Callable] = None
    terminal_derivatives: Optional[Callable] = None

    def running_expansion(self, x, u, theta, t):
        if self.running_derivatives is not None:
            return self.running_derivatives(x, u, theta, t)
        return fd_cost_derivatives(self, x, u, theta, t)

    def terminal_expansion(self, x, theta):
        if self.terminal_derivatives is not None:
            return self.terminal_derivatives(x, theta)
        return fd_terminal_cost_derivatives(self, x, theta)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    controls: np.ndarray
    params: np.ndarray
    cost: float

    @property
    def horizon(self):
        return self.controls.shape[0]


def as_controls(controls, control_dim):
    """Coerce a control sequence to shape ``(T, n_u)`` (``n_u`` may be zero)."""
    controls = np.asarray(controls, dtype=float)
    if control_dim == 0:
        return controls.reshape(len(controls), 0)
    if controls.ndim == 1 and control_dim == 1:
        controls = controls[:, None]
    if controls.ndim != 2 or controls.shape[1] != control_dim:
        raise ShapeError(f"controls have shape {controls.shape}, expected (T, {control_dim})")
    return controls


def check_dimensions(model, x1, controls, theta):
    x1 = np.asarray(x1, dtype=float)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    controls = as_controls(controls, model.control_dim)
    if x1.shape != (model.state_dim,):
        raise ShapeError(f"initial state has shape {x1.shape}, expected ({model.state_dim},)")
    if theta.shape != (model.param_dim,):
        raise ShapeError(f"parameters have shape {theta.shape}, expected ({model.param_dim},)")
    if controls.shape[0] < 1:
        raise ShapeError("horizon must contain at least one control step")
    return x1, controls, theta


def rollout(model, cost, x1, controls, theta):
    """Simulate ``controls`` from ``x1`` under ``theta`` and accumulate the cost."""
    x1, controls, theta = check_dimensions(model, x1, controls, theta)
    horizon = controls.shape[0]
    states = np.empty((horizon + 1, model.state_dim))
    states[0] = x1
    total = 0.0
    for t in range(horizon):
        total += cost.running(states[t], controls[t], theta, t)
        try:
            next_state = model.step(states[t], controls[t], theta, t)
        except DivergedRollout as exc:
            raise DivergedRollout(t + 1) from exc
        if not np.all(np.isfinite(next_state)):
            raise DivergedRollout(t + 1)
        states[t + 1] = next_state
    total += cost.terminal(states[horizon], theta)
    if not np.isfinite(total):
        raise DivergedRollout(horizon, f"non-finite cost along the rollout ({total})")
    return Trajectory(states=states, controls=controls, params=theta, cost=float(total))


def trajectory_cost(cost, states, controls, theta):
    total = 0.0
    for t in range(controls.shape[0]):
        total += cost.running(states[t], controls[t], theta, t)
    return float(total + cost.terminal(states[-1], theta))


# ---------------------------------------------------------------------------
# Finite-difference derivative oracles
# ---------------------------------------------------------------------------

def _evaluate(func, z):
    value = np.asarray(func(z), dtype=float)
    if not np.all(np.isfinite(value)):
        raise DerivativeProbeFailed(f"non-finite value while probing at {z}")
    return value


def _central_jacobian(func, z, rel_step):
    """Columns ``(func(z + h e_j) - func(z - h e_j)) / (2 h)`` stacked on the last axis."""
    if z.size == 0:
        return np.zeros(_evaluate(func, z).shape + (0,))
    columns = []
    for j in range(z.size):
        h = rel_step * max(1.0, abs(z[j]))
        z_plus, z_minus = z.copy(), z.copy()
        z_plus[j] += h
        z_minus[j] -= h
        columns.append((_evaluate(func, z_plus) - _evaluate(func, z_minus)) / (z_plus[j] - z_minus[j]))
    return np.stack(columns, axis=-1)


def _fd_gradient_hessian(func, z, rel_step, second_rel_step):
    value = float(_evaluate(func, z))
    gradient = _central_jacobian(func, z, rel_step)
    n = z.size
    hessian = np.zeros((n, n))
    steps = second_rel_step * np.maximum(1.0, np.abs(z))
    for i in range(n):
        for j in range(i, n):
            def shifted(si, sj):
                zz = z.copy()
                zz[i] += si * steps[i]
                zz[j] += sj * steps[j]
                return float(_evaluate(func, zz))
            entry = (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) / (4.0 * steps[i] * steps[j])
            hessian[i, j] = hessian[j, i] = entry
    return value, gradient, hessian


def fd_dynamics_derivatives(model, x, u, theta, t=0, rel_step=FD_REL_STEP, second_order=False,
                            second_rel_step=FD_SECOND_REL_STEP):
    """
    Central-difference Jacobians of ``model.step`` at ``(x, u, theta)``.

    Column ``j`` is perturbed with ``h_j = rel_step * max(1, |z_j|)``; the
    first-order blocks never consult ``model.jacobian``, so they can check it.
    With ``second_order`` the tensors are nested central differences (step
    ``second_rel_step``) of the first-order Jacobian map, symmetrized in the
    two derivative indices.
    """
    if rel_step <= 0 or second_rel_step <= 0:
        raise ValueError("finite-difference steps must be positive")
    n_x, n_u = model.state_dim, model.control_dim
    z = np.concatenate([np.asarray(x, float), np.asarray(u, float).reshape(-1), np.asarray(theta, float).reshape(-1)])

    def split(zz):
        return zz[:n_x], zz[n_x:n_x + n_u], zz[n_x + n_u:]

    def evaluated(zz):
        return _central_jacobian(lambda w: model.step(*split(w), t), zz, rel_step)

    # tensors differentiate the analytic Jacobian when the model has one
    def first_order(zz):
        if model.jacobian is not None:
            d = model.jacobian(*split(zz), t)
            return np.hstack([d.Fx, d.Fu, d.Ftheta])
        return evaluated(zz)

    jac = evaluated(z)
    derivs = DynamicsDerivatives(Fx=jac[:, :n_x], Fu=jac[:, n_x:n_x + n_u], Ftheta=jac[:, n_x + n_u:])
    if second_order:
        tensor = _central_jacobian(first_order, z, second_rel_step)
        tensor = 0.5 * (tensor + tensor.transpose(0, 2, 1))
        xs, us, ps = slice(0, n_x), slice(n_x, n_x + n_u), slice(n_x + n_u, z.size)
        derivs.Fxx = tensor[:, xs, xs]
        derivs.Fxu = tensor[:, xs, us]
        derivs.Fuu = tensor[:, us, us]
        derivs.Fxtheta = tensor[:, xs, ps]
        derivs.Futheta = tensor[:, us, ps]
        derivs.Fthetatheta = tensor[:, ps, ps]
    return derivs


def fd_cost_derivatives(cost, x, u, theta, t, rel_step=FD_REL_STEP, second_rel_step=FD_SECOND_REL_STEP):
    """Central-difference gradient and (symmetric) Hessian of the running cost."""
    if rel_step <= 0 or second_rel_step <= 0:
        raise ValueError("finite-difference steps must be positive")
    x = np.asarray(x, float)
    u = np.asarray(u, float).reshape(-1)
    theta = np.asarray(theta, float).reshape(-1)
    n_x, n_u = x.size, u.size
    z = np.concatenate([x, u, theta])
    value, g, H = _fd_gradient_hessian(
        lambda w: cost.running(w[:n_x], w[n_x:n_x + n_u], w[n_x + n_u:], t), z, rel_step, second_rel_step)
    xs, us, ps = slice(0, n_x), slice(n_x, n_x + n_u), slice(n_x + n_u, z.size)
    return CostDerivatives(
        L0=value, Lx=g[xs], Lu=g[us], Ltheta=g[ps],
        Lxx=H[xs, xs], Lxu=H[xs, us], Lxtheta=H[xs, ps],
        Luu=H[us, us], Lutheta=H[us, ps], Lthetatheta=H[ps, ps],
    )


def fd_terminal_cost_derivatives(cost, x, theta, rel_step=FD_REL_STEP, second_rel_step=FD_SECOND_REL_STEP):
    x = np.asarray(x, float)
    theta = np.asarray(theta, float).reshape(-1)
    n_x = x.size
    z = np.concatenate([x, theta])
    value, g, H = _fd_gradient_hessian(lambda w: cost.terminal(w[:n_x], w[n_x:]), z, rel_step, second_rel_step)
    xs, ps = slice(0, n_x), slice(n_x, z.size)
    return TerminalCostDerivatives(
        phi0=value, phix=g[xs], phitheta=g[ps],
        phixx=H[xs, xs], phixtheta=H[xs, ps], phithetatheta=H[ps, ps],
    )


# ---------------------------------------------------------------------------
# Fixed-step integration of continuous vector fields
# ---------------------------------------------------------------------------

def substep_count(duration, dt_max):
    if duration < 0:
        raise ValueError(f"duration must be nonnegative, got {duration}")
    if dt_max <= 0:
        raise ValueError(f"dt_max must be positive, got {dt_max}")
    if duration == 0:
        return 0
    return max(1, math.ceil(duration / dt_max - SUBSTEP_TOLERANCE))


def _advance(field, x, u, h, scheme):
    if scheme == Integrator.EULER:
        return x + h * field(x, u)
    k1 = field(x, u)
    k2 = field(x + 0.5 * h * k1, u)
    k3 = field(x + 0.5 * h * k2, u)
    k4 = field(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def substep_integrate(field, x, u, duration, dt_max, scheme=Integrator.RK4):
    """
    Integrate ``xdot = field(x, u)`` (``u`` held constant) over ``duration``.

    Uses ``ceil(duration / dt_max)`` equal substeps; a zero duration returns
    ``x`` unchanged.
    """
    scheme = Integrator(scheme)
    x = np.array(x, dtype=float)
    count = substep_count(duration, dt_max)
    if count == 0:
        return x
    h = duration / count
    for k in range(count):
        x = _advance(field, x, u, h, scheme)
        if not np.all(np.isfinite(x)):
            raise DivergedRollout(k, f"non-finite state after substep {k}")
    return x


def substep_jacobians(field, field_jacobian, x, u, duration, dt_max, scheme=Integrator.RK4):
    """
    Integrate like :func:`substep_integrate` and differentiate through the stages.

    ``field_jacobian(x, u)`` returns the continuous Jacobians ``(A, B)``.
    Returns ``(x_next, Fx, Fu, F_duration)`` where ``F_duration`` is the
    derivative of ``x_next`` with respect to ``duration`` at a fixed substep
    count (one-sided from above at zero duration).
    """
    scheme = Integrator(scheme)
    x = np.array(x, dtype=float)
    u = np.asarray(u, dtype=float).reshape(-1)
    n_x, n_u = x.size, u.size
    count = substep_count(duration, dt_max)
    if count == 0:
        return x, np.eye(n_x), np.zeros((n_x, n_u)), np.asarray(field(x, u), dtype=float)

    h = duration / count
    dh = 1.0 / count
    n_z = n_x + n_u + 1
    # columns: initial state | control | duration
    sens = np.zeros((n_x, n_z))
    sens[:, :n_x] = np.eye(n_x)

    def stage(point, dpoint):
        value = np.asarray(field(point, u), dtype=float)
        A, B = field_jacobian(point, u)
        dvalue = A @ dpoint
        dvalue[:, n_x:n_x + n_u] += B
        return value, dvalue

    for k in range(count):
        if scheme == Integrator.EULER:
            f, df = stage(x, sens)
            x_next = x + h * f
            sens = sens + h * df
            sens[:, -1] += dh * f
        else:
            k1, d1 = stage(x, sens)
            p2, dp2 = x + 0.5 * h * k1, sens + 0.5 * h * d1
            dp2[:, -1] += 0.5 * dh * k1
            k2, d2 = stage(p2, dp2)
            p3, dp3 = x + 0.5 * h * k2, sens + 0.5 * h * d2
            dp3[:, -1] += 0.5 * dh * k2
            k3, d3 = stage(p3, dp3)
            p4, dp4 = x + h * k3, sens + h * d3
            dp4[:, -1] += dh * k3
            k4, d4 = stage(p4, dp4)
            increment = k1 + 2.0 * k2 + 2.0 * k3 + k4
            x_next = x + (h / 6.0) * increment
            sens = sens + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            sens[:, -1] += (dh / 6.0) * increment
        if not np.all(np.isfinite(x_next)):
            raise DivergedRollout(k, f"non-finite state after substep {k}")
        x = x_next
    return x, sens[:, :n_x], sens[:, n_x:n_x + n_u], sens[:, -1]


def discretize(field, n_x, n_u, n_theta, dt, field_jacobian=None, dt_max=None,
               scheme=Integrator.RK4, name='model'):
    """
    Wrap ``xdot = field(x, u, theta)`` into a :class:`ParameterizedModel` with step ``dt``.

    ``field_jacobian(x, u, theta)`` returns ``(A, B, C)``; when given, the
    model's discrete Jacobians are exact derivatives of the integrator.
    """
    dt_max = dt if dt_max is None else dt_max
    scheme = Integrator(scheme)

    def step(x, u, theta, t):
        return substep_integrate(lambda xx, uu: field(xx, uu, theta), x, u, dt, dt_max, scheme)

    jacobian = None
    if field_jacobian is not None:
        def joint_field(xx, v):
            return field(xx, v[:n_u], v[n_u:])

        def joint_jacobian(xx, v):
            A, B, C = field_jacobian(xx, v[:n_u], v[n_u:])
            return A, np.hstack([B, C])

        def jacobian(x, u, theta, t):
            v = np.concatenate([np.asarray(u, float).reshape(-1), np.asarray(theta, float).reshape(-1)])
            _, Fx, Fv, _ = substep_jacobians(joint_field, joint_jacobian, x, v, dt, dt_max, scheme)
            return DynamicsDerivatives(Fx=Fx, Fu=Fv[:, :n_u], Ftheta=Fv[:, n_u:])

    return ParameterizedModel(n_x, n_u, n_theta, step, jacobian=jacobian, name=name)
