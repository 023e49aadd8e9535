"""
Benchmark systems.

* cartpole: states ``[position, pole angle, velocity, angular rate]`` with
  the pole hanging down at angle 0 and upright at pi; ``theta = [pole mass]``.
* quadrotor: states ``[x, y, h, roll, pitch, yaw, vx, vy, vh, p, q, r]`` with
  inertial-frame velocities, body rates and ZYX Euler angles; controls
  ``[thrust, roll torque, pitch torque, yaw torque]``;
  ``theta = [mass, Jx, Jy, Jz]``.
* lti: random controllable ``x' = A x + B u + C theta`` with a convex
  quadratic cost, used where closed-form optima are needed.

Continuous fields are discretized with RK4 substeps and exact discrete
Jacobians.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .boxqp import Bounds
from .dynamics import (
    CostDerivatives, CostModel, Integrator, ParameterizedModel, TerminalCostDerivatives,
    DynamicsDerivatives, discretize,
)
from .exceptions import GimbalLock
from .solver import Problem
from .sto import Mode, ModeSequence

GIMBAL_MARGIN = 1e-3
CARTPOLE_DT = 0.02
QUADROTOR_DT = 0.01


def _positive(instance, names):
    for name in names:
        if not getattr(instance, name) > 0:
            raise ValueError(f"{name} must be strictly positive")


# ---------------------------------------------------------------------------
# Cartpole
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CartpoleParams:
    cart_mass: float = 1.0
    pole_mass: float = 0.5
    pole_length: float = 0.5
    gravity: float = 9.81

    def __post_init__(self):
        _positive(self, ('cart_mass', 'pole_mass', 'pole_length', 'gravity'))

    @property
    def theta(self):
        return np.array([self.pole_mass])


def _cartpole_terms(x, u, mc, mp, l, g):
    _, angle, _, omega = x
    s, c = math.sin(angle), math.cos(angle)
    force = float(u[0])
    denom = mc + mp * s * s
    n1 = force + mp * s * (l * omega * omega + g * c)
    n2 = -force * c - mp * l * omega * omega * c * s - (mc + mp) * g * s
    return s, c, force, denom, n1, n2


def _cartpole_field(x, u, mc, mp, l, g):
    _, _, vel, omega = x
    _, _, _, denom, n1, n2 = _cartpole_terms(x, u, mc, mp, l, g)
    return np.array([vel, omega, n1 / denom, n2 / (l * denom)])


def _cartpole_jacobian(x, u, mc, mp, l, g):
    _, _, _, omega = x
    s, c, force, denom, n1, n2 = _cartpole_terms(x, u, mc, mp, l, g)
    # partials of (denom, n1, n2) with respect to angle, omega, force, pole mass
    d_denom = np.array([2 * mp * s * c, 0.0, 0.0, s * s])
    d_n1 = np.array([
        mp * (c * l * omega * omega + g * (c * c - s * s)),
        2 * mp * s * l * omega,
        1.0,
        s * (l * omega * omega + g * c),
    ])
    d_n2 = np.array([
        force * s - mp * l * omega * omega * (c * c - s * s) - (mc + mp) * g * c,
        -2 * mp * l * omega * c * s,
        -c,
        -l * omega * omega * c * s - g * s,
    ])
    d_acc = (d_n1 * denom - n1 * d_denom) / denom ** 2
    d_alpha = (d_n2 * denom - n2 * d_denom) / (l * denom ** 2)
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    A[2, 1], A[2, 3] = d_acc[0], d_acc[1]
    A[3, 1], A[3, 3] = d_alpha[0], d_alpha[1]
    B = np.array([[0.0], [0.0], [d_acc[2]], [d_alpha[2]]])
    C = np.array([[0.0], [0.0], [d_acc[3]], [d_alpha[3]]])
    return A, B, C


def cartpole_field(x, u, params=CartpoleParams()):
    """Frictionless cartpole equations of motion."""
    return _cartpole_field(x, u, params.cart_mass, params.pole_mass, params.pole_length, params.gravity)


def cartpole_field_jacobian(x, u, params=CartpoleParams()):
    """``(A, B, C)`` with ``C`` the derivative with respect to the pole mass."""
    return _cartpole_jacobian(x, u, params.cart_mass, params.pole_mass, params.pole_length, params.gravity)


def cartpole_energy(x, params=CartpoleParams()):
    _, angle, vel, omega = x
    mc, mp, l, g = params.cart_mass, params.pole_mass, params.pole_length, params.gravity
    return (0.5 * (mc + mp) * vel ** 2 + mp * l * vel * omega * math.cos(angle)
            + 0.5 * mp * l ** 2 * omega ** 2 - mp * g * l * math.cos(angle))


def cartpole_model(params=CartpoleParams(), dt=CARTPOLE_DT, dt_max=None, scheme=Integrator.RK4):
    mc, l, g = params.cart_mass, params.pole_length, params.gravity
    return discretize(
        lambda x, u, theta: _cartpole_field(x, u, mc, theta[0], l, g),
        4, 1, 1, dt,
        field_jacobian=lambda x, u, theta: _cartpole_jacobian(x, u, mc, theta[0], l, g),
        dt_max=dt_max, scheme=scheme, name='cartpole',
    )


# ---------------------------------------------------------------------------
# Quadrotor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadrotorParams:
    mass: float = 0.468
    Jx: float = 4.856e-3
    Jy: float = 4.856e-3
    Jz: float = 8.801e-3
    gravity: float = 9.81

    def __post_init__(self):
        _positive(self, ('mass', 'Jx', 'Jy', 'Jz', 'gravity'))

    @property
    def theta(self):
        return np.array([self.mass, self.Jx, self.Jy, self.Jz])

    @property
    def hover_thrust(self):
        return self.mass * self.gravity


def _check_pitch(pitch):
    if abs(pitch) >= math.pi / 2 - GIMBAL_MARGIN:
        raise GimbalLock(pitch)


def _thrust_direction(roll, pitch, yaw):
    sr, cr = math.sin(roll), math.cos(roll)
    sp, cp = math.sin(pitch), math.cos(pitch)
    sy, cy = math.sin(yaw), math.cos(yaw)
    direction = np.array([cr * sp * cy + sr * sy, cr * sp * sy - sr * cy, cr * cp])
    # columns: d/droll, d/dpitch, d/dyaw
    d_direction = np.array([
        [-sr * sp * cy + cr * sy, cr * cp * cy, -cr * sp * sy + sr * cy],
        [-sr * sp * sy - cr * cy, cr * cp * sy, cr * sp * cy + sr * sy],
        [-sr * cp, -cr * sp, 0.0],
    ])
    return direction, d_direction


def _quadrotor_field(x, u, m, Jx, Jy, Jz, g):
    roll, pitch, yaw = x[3:6]
    p, q, r = x[9:12]
    _check_pitch(pitch)
    thrust, t_roll, t_pitch, t_yaw = (float(v) for v in u)
    direction, _ = _thrust_direction(roll, pitch, yaw)
    sr, cr = math.sin(roll), math.cos(roll)
    tp, cp = math.tan(pitch), math.cos(pitch)
    xdot = np.empty(12)
    xdot[0:3] = x[6:9]
    xdot[3] = p + tp * (sr * q + cr * r)
    xdot[4] = cr * q - sr * r
    xdot[5] = (sr * q + cr * r) / cp
    xdot[6:9] = (thrust / m) * direction
    xdot[8] -= g
    xdot[9] = ((Jy - Jz) * q * r + t_roll) / Jx
    xdot[10] = ((Jz - Jx) * p * r + t_pitch) / Jy
    xdot[11] = ((Jx - Jy) * p * q + t_yaw) / Jz
    return xdot


def _quadrotor_jacobian(x, u, m, Jx, Jy, Jz, g):
    roll, pitch, yaw = x[3:6]
    p, q, r = x[9:12]
    _check_pitch(pitch)
    thrust, t_roll, t_pitch, t_yaw = (float(v) for v in u)
    direction, d_direction = _thrust_direction(roll, pitch, yaw)
    sr, cr = math.sin(roll), math.cos(roll)
    tp, cp, sp = math.tan(pitch), math.cos(pitch), math.sin(pitch)
    A = np.zeros((12, 12))
    B = np.zeros((12, 4))
    C = np.zeros((12, 4))

    A[0:3, 6:9] = np.eye(3)

    rates = sr * q + cr * r
    A[3, 3] = tp * (cr * q - sr * r)
    A[3, 4] = rates / cp ** 2
    A[3, 9], A[3, 10], A[3, 11] = 1.0, sr * tp, cr * tp
    A[4, 3] = -sr * q - cr * r
    A[4, 10], A[4, 11] = cr, -sr
    A[5, 3] = (cr * q - sr * r) / cp
    A[5, 4] = rates * sp / cp ** 2
    A[5, 10], A[5, 11] = sr / cp, cr / cp

    A[6:9, 3:6] = (thrust / m) * d_direction
    B[6:9, 0] = direction / m
    C[6:9, 0] = -thrust * direction / m ** 2

    A[9, 10], A[9, 11] = (Jy - Jz) * r / Jx, (Jy - Jz) * q / Jx
    A[10, 9], A[10, 11] = (Jz - Jx) * r / Jy, (Jz - Jx) * p / Jy
    A[11, 9], A[11, 10] = (Jx - Jy) * q / Jz, (Jx - Jy) * p / Jz
    B[9, 1], B[10, 2], B[11, 3] = 1.0 / Jx, 1.0 / Jy, 1.0 / Jz

    # inertia columns: theta = [m, Jx, Jy, Jz]
    C[9, 1] = -((Jy - Jz) * q * r + t_roll) / Jx ** 2
    C[9, 2], C[9, 3] = q * r / Jx, -q * r / Jx
    C[10, 2] = -((Jz - Jx) * p * r + t_pitch) / Jy ** 2
    C[10, 1], C[10, 3] = -p * r / Jy, p * r / Jy
    C[11, 3] = -((Jx - Jy) * p * q + t_yaw) / Jz ** 2
    C[11, 1], C[11, 2] = p * q / Jz, -p * q / Jz
    return A, B, C


def quadrotor_field(x, u, params=QuadrotorParams()):
    """6-DOF Euler-angle quadrotor; raises :class:`GimbalLock` near +-90 degree pitch."""
    return _quadrotor_field(x, u, params.mass, params.Jx, params.Jy, params.Jz, params.gravity)


def quadrotor_field_jacobian(x, u, params=QuadrotorParams()):
    return _quadrotor_jacobian(x, u, params.mass, params.Jx, params.Jy, params.Jz, params.gravity)


def quadrotor_model(params=QuadrotorParams(), dt=QUADROTOR_DT, dt_max=None, scheme=Integrator.RK4):
    g = params.gravity
    return discretize(
        lambda x, u, theta: _quadrotor_field(x, u, *theta, g),
        12, 4, 4, dt,
        field_jacobian=lambda x, u, theta: _quadrotor_jacobian(x, u, *theta, g),
        dt_max=dt_max, scheme=scheme, name='quadrotor',
    )


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------

def _as_weight(weight, size):
    weight = np.asarray(weight, dtype=float)
    if weight.ndim == 0:
        return weight * np.eye(size)
    if weight.ndim == 1:
        return np.diag(weight)
    return weight


def tracking_cost(Q, R, target, Qf=None, terminal_target=None, control_ref=None, param_dim=0,
                  param_weight=None, param_ref=None):
    """
    Quadratic tracking cost with analytic derivatives.

    ``0.5 |x - target|_Q^2 + 0.5 |u - control_ref|_R^2`` per step and
    ``0.5 |x - terminal_target|_Qf^2 + 0.5 |theta - param_ref|_W^2`` at the
    end. Weights may be scalars, diagonals or full matrices.
    """
    target = np.asarray(target, dtype=float)
    n_x = target.size
    Q = _as_weight(Q, n_x)
    Qf = Q if Qf is None else _as_weight(Qf, n_x)
    terminal_target = target if terminal_target is None else np.asarray(terminal_target, dtype=float)
    R = np.asarray(R, dtype=float)
    if control_ref is not None:
        n_u = np.asarray(control_ref).size
    else:
        n_u = R.shape[0] if R.ndim else 1
    R = _as_weight(R, n_u)
    control_ref = np.zeros(n_u) if control_ref is None else np.asarray(control_ref, dtype=float)
    W = _as_weight(0.0 if param_weight is None else param_weight, param_dim)
    param_ref = np.zeros(param_dim) if param_ref is None else np.asarray(param_ref, dtype=float)

    def running(x, u, theta, t):
        dx, du = x - target, np.asarray(u).reshape(-1) - control_ref
        return 0.5 * float(dx @ Q @ dx + du @ R @ du)

    def terminal(x, theta):
        dx, dp = x - terminal_target, np.asarray(theta).reshape(-1) - param_ref
        return 0.5 * float(dx @ Qf @ dx + dp @ W @ dp)

    def running_derivatives(x, u, theta, t):
        dx, du = x - target, np.asarray(u).reshape(-1) - control_ref
        return CostDerivatives(
            L0=0.5 * float(dx @ Q @ dx + du @ R @ du), Lx=Q @ dx, Lu=R @ du, Ltheta=np.zeros(param_dim),
            Lxx=Q, Lxu=np.zeros((n_x, n_u)), Lxtheta=np.zeros((n_x, param_dim)),
            Luu=R, Lutheta=np.zeros((n_u, param_dim)), Lthetatheta=np.zeros((param_dim, param_dim)),
        )

    def terminal_derivatives(x, theta):
        dx, dp = x - terminal_target, np.asarray(theta).reshape(-1) - param_ref
        return TerminalCostDerivatives(
            phi0=0.5 * float(dx @ Qf @ dx + dp @ W @ dp), phix=Qf @ dx, phitheta=W @ dp,
            phixx=Qf, phixtheta=np.zeros((n_x, param_dim)), phithetatheta=W,
        )

    return CostModel(running, terminal, running_derivatives, terminal_derivatives)


# ---------------------------------------------------------------------------
# Linear test family
# ---------------------------------------------------------------------------

def lti_model(A, B, C=None):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n_x, n_u = B.shape
    C = np.zeros((n_x, 0)) if C is None else np.asarray(C, dtype=float)

    def step(x, u, theta, t):
        return A @ x + B @ u + C @ theta

    derivs = DynamicsDerivatives(Fx=A, Fu=B, Ftheta=C)
    return ParameterizedModel(n_x, n_u, C.shape[1], step, jacobian=lambda x, u, theta, t: derivs, name='lti')


def is_controllable(A, B):
    n_x = A.shape[0]
    blocks, power = [], np.eye(n_x)
    for _ in range(n_x):
        blocks.append(power @ B)
        power = A @ power
    return np.linalg.matrix_rank(np.hstack(blocks)) == n_x


@dataclass
class LTIProblem:
    """
    ``x' = A x + B u + C theta`` with running cost ``0.5 x'Qx + 0.5 u'Ru`` and
    terminal cost ``0.5 x'Qf x + 0.5 |theta - theta_ref|_W^2``.
    """
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    W: np.ndarray
    theta_ref: np.ndarray
    x1: np.ndarray
    horizon: int
    model: ParameterizedModel = field(init=False)
    cost: CostModel = field(init=False)

    def __post_init__(self):
        n_x = self.A.shape[0]
        self.model = lti_model(self.A, self.B, self.C)
        self.cost = tracking_cost(self.Q, self.R, np.zeros(n_x), Qf=self.Qf,
                                  param_dim=self.C.shape[1], param_weight=self.W, param_ref=self.theta_ref)

    def problem(self, controls=None, theta=None):
        controls = np.zeros((self.horizon, self.B.shape[1])) if controls is None else controls
        theta = np.zeros(self.C.shape[1]) if theta is None else theta
        return Problem(self.model, self.cost, self.x1, controls, theta)


def lti_problem(n_x, n_u, n_theta, seed=0, horizon=30):
    """A seeded random controllable LTI problem, strictly convex in ``(U, theta)``."""
    if n_x < 1 or n_u < 1 or n_theta < 0:
        raise ValueError("need n_x >= 1, n_u >= 1 and n_theta >= 0")
    rng = np.random.default_rng(seed)
    while True:
        A = np.eye(n_x) + 0.1 * rng.standard_normal((n_x, n_x))
        B = rng.standard_normal((n_x, n_u))
        if is_controllable(A, B):
            break
    C = 0.5 * rng.standard_normal((n_x, n_theta))
    L = rng.standard_normal((n_x, n_x))
    Q = L @ L.T / n_x + 0.1 * np.eye(n_x)
    return LTIProblem(
        A=A, B=B, C=C, Q=Q, R=np.eye(n_u), Qf=10.0 * Q, W=np.eye(n_theta),
        theta_ref=rng.standard_normal(n_theta), x1=rng.standard_normal(n_x), horizon=horizon,
    )


# ---------------------------------------------------------------------------
# Benchmark tasks
# ---------------------------------------------------------------------------

CARTPOLE_UPRIGHT = np.array([0.0, math.pi, 0.0, 0.0])


@dataclass(frozen=True)
class SystemEntry:
    name: str
    build_model: Callable
    default_params: object
    build_problem: Callable
    state_labels: tuple
    param_labels: tuple


def cartpole_swingup(params=CartpoleParams(), horizon=100, theta0=None, weights=None, dt=CARTPOLE_DT):
    """Swing the pole up from rest hanging down; the pole mass is the parameter."""
    weights = {**{'state': [1.0, 1.0, 0.1, 0.1], 'control': 0.01, 'terminal': 100.0, 'param': 1.0},
               **(weights or {})}
    theta0 = params.theta if theta0 is None else np.asarray(theta0, dtype=float)
    cost = tracking_cost(
        weights['state'], weights['control'], CARTPOLE_UPRIGHT,
        Qf=weights['terminal'] * np.ones(4), param_dim=1, param_weight=weights['param'], param_ref=params.theta,
    )
    return Problem(cartpole_model(params, dt), cost, np.zeros(4), np.zeros((horizon, 1)), theta0)


def quadrotor_point_to_point(params=QuadrotorParams(), horizon=100, target=(5.0, 5.0, 5.0), theta0=None,
                             weights=None, dt=QUADROTOR_DT, heading=0.0):
    """
    Fly from hover at the origin to a hover at ``target`` facing ``heading`` (yaw, rad).

    The parameters are mass and inertia. A nonzero heading makes the plan
    use the yaw torque, which is the only input that excites ``Jz``.
    """
    weights = {**{'position': 1.0, 'attitude': 1.0, 'velocity': 0.1, 'rates': 0.1, 'control': 0.01,
                  'terminal': 100.0, 'param': 1.0}, **(weights or {})}
    goal = np.zeros(12)
    goal[0:3] = target
    goal[5] = heading
    state_weight = np.concatenate([
        np.full(3, weights['position']), np.full(3, weights['attitude']),
        np.full(3, weights['velocity']), np.full(3, weights['rates']),
    ])
    hover = np.array([params.hover_thrust, 0.0, 0.0, 0.0])
    theta0 = params.theta if theta0 is None else np.asarray(theta0, dtype=float)
    cost = tracking_cost(
        state_weight, weights['control'], goal, Qf=weights['terminal'] * state_weight,
        control_ref=hover, param_dim=4, param_weight=weights['param'], param_ref=params.theta,
    )
    return Problem(quadrotor_model(params, dt), cost, np.zeros(12), np.tile(hover, (horizon, 1)), theta0)


def lti_task(n_x=4, n_u=2, n_theta=2, seed=0, horizon=30):
    return lti_problem(n_x, n_u, n_theta, seed, horizon).problem()


SYSTEMS = {
    'cartpole': SystemEntry(
        'cartpole', cartpole_model, CartpoleParams(), cartpole_swingup,
        ('position', 'angle', 'velocity', 'angular_rate'), ('pole_mass',)),
    'quadrotor': SystemEntry(
        'quadrotor', quadrotor_model, QuadrotorParams(), quadrotor_point_to_point,
        ('x', 'y', 'h', 'roll', 'pitch', 'yaw', 'vx', 'vy', 'vh', 'p', 'q', 'r'),
        ('mass', 'Jx', 'Jy', 'Jz')),
    'lti': SystemEntry('lti', lti_model, None, lti_task, (), ()),
}


def get_system(name):
    try:
        return SYSTEMS[name]
    except KeyError:
        raise KeyError(f"unknown system '{name}'; choose from {sorted(SYSTEMS)}") from None



# ---------------------------------------------------------------------------
# Switching-time tasks
# ---------------------------------------------------------------------------

def quadratic_mode(vector_field, field_jacobian, target, exit_weight, control_weight, time_weight, control_ref,
                   name='mode'):
    """Mode with cost rate ``time_weight + 0.5 |u - u_ref|_R^2`` and exit cost ``0.5 |x - target|_P^2``."""
    target = np.asarray(target, dtype=float)
    P = _as_weight(exit_weight, target.size)
    control_ref = np.asarray(control_ref, dtype=float).reshape(-1)
    R = _as_weight(control_weight, control_ref.size)
    n_x, n_u = target.size, control_ref.size

    def running_cost(x, u):
        du = np.asarray(u).reshape(-1) - control_ref
        return time_weight + 0.5 * float(du @ R @ du)

    def running_cost_derivatives(x, u):
        du = np.asarray(u).reshape(-1) - control_ref
        return (time_weight + 0.5 * float(du @ R @ du), np.zeros(n_x), R @ du,
                np.zeros((n_x, n_x)), np.zeros((n_x, n_u)), R)

    def exit_cost(x):
        dx = x - target
        return 0.5 * float(dx @ P @ dx)

    def exit_cost_derivatives(x):
        dx = x - target
        return 0.5 * float(dx @ P @ dx), P @ dx, P

    return Mode(vector_field, running_cost, exit_cost, field_jacobian, running_cost_derivatives,
                exit_cost_derivatives, name)


@dataclass(frozen=True)
class STOTask:
    sequence: ModeSequence
    x1: np.ndarray
    initial_controls: Optional[np.ndarray] = None
    control_bounds: Optional[Bounds] = None


def multi_target_cartpole(params=CartpoleParams(), steps_per_mode=50, targets=(-5.0, 5.0), exit_weight=100.0,
                          control_weight=1e-2, time_weight=1.0, dt=0.01):
    """Pole upright at rest at ``x = targets[0]``, then upright at rest at ``x = targets[1]``."""
    modes = []
    for i, position in enumerate(targets):
        target = CARTPOLE_UPRIGHT.copy()
        target[0] = position
        modes.append(quadratic_mode(
            lambda x, u: cartpole_field(x, u, params),
            lambda x, u: cartpole_field_jacobian(x, u, params)[:2],
            target, exit_weight, control_weight, time_weight, np.zeros(1), name=f'target_{i + 1}'))
    seq = ModeSequence(modes, [steps_per_mode] * len(modes), 4, 1, dt=dt)
    return STOTask(seq, np.zeros(4))


def two_target_quadrotor(params=QuadrotorParams(), steps_per_mode=50, targets=((5.0, 5.0, 5.0), (10.0, -5.0, -5.0)),
                         exit_weight=100.0, control_weight=1e-2, time_weight=1.0, dt=0.01):
    """Reach each target position with zero velocity in turn, starting from hover at the origin."""
    hover = np.array([params.hover_thrust, 0.0, 0.0, 0.0])
    modes = []
    for i, position in enumerate(targets):
        target = np.zeros(12)
        target[0:3] = position
        modes.append(quadratic_mode(
            lambda x, u: quadrotor_field(x, u, params),
            lambda x, u: quadrotor_field_jacobian(x, u, params)[:2],
            target, exit_weight, control_weight, time_weight, hover, name=f'target_{i + 1}'))
    seq = ModeSequence(modes, [steps_per_mode] * len(modes), 12, 4, dt=dt)
    return STOTask(seq, np.zeros(12), initial_controls=np.tile(hover, (seq.horizon, 1)))


DOUBLE_INTEGRATOR_A = np.array([[0.0, 1.0], [0.0, 0.0]])
DOUBLE_INTEGRATOR_B = np.array([[0.0], [1.0]])


def double_integrator(steps_per_mode=50, target=(1.0, 0.0), exit_weight=100.0, control_weight=1.0,
                      time_weight=1.0, dt=0.01):
    """Single mode, minimum effort plus time: move to ``target`` and stop."""
    A, B = DOUBLE_INTEGRATOR_A, DOUBLE_INTEGRATOR_B
    mode = quadratic_mode(
        lambda x, u: A @ x + B @ np.asarray(u).reshape(-1), lambda x, u: (A, B),
        target, exit_weight, control_weight, time_weight, np.zeros(1), name='reach')
    seq = ModeSequence([mode], [steps_per_mode], 2, 1, dt=dt)
    return STOTask(seq, np.zeros(2))


STO_TASKS = {
    'cartpole': multi_target_cartpole,
    'quadrotor': two_target_quadrotor,
    'double_integrator': double_integrator,
}


def get_sto_task(name):
    try:
        return STO_TASKS[name]
    except KeyError:
        raise KeyError(f"unknown switching-time task '{name}'; choose from {sorted(STO_TASKS)}") from None
