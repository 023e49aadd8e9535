"""
Backward pass of parameterized DDP.

For ``t = T-1 ... 0`` the Q-function is expanded to second order in
``(dx, du, dtheta)`` about the nominal, the control gains ``k, K, M`` are
obtained from the (state-regularized) ``Quu`` block, and the value expansion
in ``(dx, dtheta)`` is propagated one step back. At ``t = 0`` the parameter
gain ``m`` minimizes the initial value expansion over ``dtheta``.

Regularization follows the state-space scheme: ``Vxx + mu I`` replaces
``Vxx`` inside every product with the dynamics Jacobians when forming the
gains, while the value recursion uses the unregularized blocks so that
``mu`` only damps the step. ``nu I`` is added to the t=0 parameter Hessian.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .boxqp import BoxQP, solve_boxqp
from .exceptions import NotPositiveDefinite, ShapeError
from .linalg import spd_factor, spd_solve, symmetrize

logger = logging.getLogger(__name__)


@dataclass
class QExpansion:
    Q0: float
    Qx: np.ndarray
    Qu: np.ndarray
    Qtheta: np.ndarray
    Qxx: np.ndarray
    Qxu: np.ndarray
    Qxtheta: np.ndarray
    Quu: np.ndarray
    Qutheta: np.ndarray
    Qthetatheta: np.ndarray

    @property
    def Qux(self):
        return self.Qxu.T

    @property
    def Qthetau(self):
        return self.Qutheta.T

    @property
    def Qthetax(self):
        return self.Qxtheta.T


@dataclass
class ValueExpansion:
    V0: float
    Vx: np.ndarray
    Vtheta: np.ndarray
    Vxx: np.ndarray
    Vxtheta: np.ndarray
    Vthetatheta: np.ndarray

    @property
    def Vthetax(self):
        return self.Vxtheta.T

    @classmethod
    def from_terminal(cls, phi):
        return cls(
            V0=float(phi.phi0), Vx=np.array(phi.phix, dtype=float), Vtheta=np.array(phi.phitheta, dtype=float),
            Vxx=symmetrize(np.asarray(phi.phixx, dtype=float)), Vxtheta=np.array(phi.phixtheta, dtype=float),
            Vthetatheta=symmetrize(np.asarray(phi.phithetatheta, dtype=float)),
        )

    @classmethod
    def zeros(cls, n_x, n_theta):
        return cls(0.0, np.zeros(n_x), np.zeros(n_theta), np.zeros((n_x, n_x)),
                   np.zeros((n_x, n_theta)), np.zeros((n_theta, n_theta)))


@dataclass
class StepGains:
    k: np.ndarray
    K: np.ndarray
    M: np.ndarray
    clamped: np.ndarray

    @classmethod
    def zeros(cls, n_u, n_x, n_theta):
        return cls(np.zeros(n_u), np.zeros((n_u, n_x)), np.zeros((n_u, n_theta)), np.zeros(n_u, dtype=bool))


@dataclass
class ParameterGain:
    """``m`` with the regularized t=0 parameter Hessian and gradient it was solved from."""
    m: np.ndarray
    Vthetatheta1: np.ndarray
    Vtheta1: np.ndarray
    psi: float
    clamped: np.ndarray

    @classmethod
    def empty(cls):
        return cls(np.zeros(0), np.zeros((0, 0)), np.zeros(0), 0.0, np.zeros(0, dtype=bool))


@dataclass(frozen=True)
class RegularizationState:
    """
    Levenberg-Marquardt style regularizers ``mu`` (states) and ``nu`` (parameters).

    Each grows to ``max(value * factor, minimum)`` on failure and shrinks to
    ``value / factor`` on success, dropping to zero below ``minimum``; both
    are capped at ``maximum``.
    """
    mu: float = 0.0
    nu: float = 0.0
    minimum: float = 1e-6
    maximum: float = 1e10
    factor: float = 8.0

    def __post_init__(self):
        if self.factor <= 1:
            raise ValueError("regularization factor must exceed 1")
        if not 0 < self.minimum <= self.maximum:
            raise ValueError("need 0 < minimum <= maximum")
        for name in ('mu', 'nu'):
            value = getattr(self, name)
            if value < 0:
                raise ValueError(f"{name} must be nonnegative")
            object.__setattr__(self, name, self._snap(value))

    def _snap(self, value):
        if value < self.minimum:
            return 0.0
        return min(value, self.maximum)

    def _grow(self, value):
        return min(max(value * self.factor, self.minimum), self.maximum)

    def _shrink(self, value):
        return self._snap(value / self.factor)

    def increase_mu(self):
        return replace(self, mu=self._grow(self.mu))

    def increase_nu(self):
        return replace(self, nu=self._grow(self.nu))

    def decrease(self):
        return replace(self, mu=self._shrink(self.mu), nu=self._shrink(self.nu))

    @property
    def mu_exhausted(self):
        return self.mu >= self.maximum

    @property
    def nu_exhausted(self):
        return self.nu >= self.maximum


@dataclass
class GainSchedule:
    """Per-step gains, the parameter gain and the Newton decrements ``lambda_t`` and ``psi``."""
    steps: List[StepGains]
    parameter_gain: ParameterGain
    decrements: np.ndarray

    @property
    def psi(self):
        return self.parameter_gain.psi

    @property
    def m(self):
        return self.parameter_gain.m

    @property
    def total_decrement(self):
        return float(np.sum(self.decrements))


@dataclass
class BackwardOptions:
    full_second_order: bool = False
    control_bounds: Optional[object] = None
    param_bounds: Optional[object] = None
    frozen: Optional[np.ndarray] = None

    def is_frozen(self, t):
        return self.frozen is not None and bool(self.frozen[t])


@dataclass
class TrajectoryDerivatives:
    running: list
    dynamics: list
    terminal: object


@dataclass
class BackwardPassResult:
    schedule: GainSchedule
    q_expansions: List[QExpansion] = field(default_factory=list)
    value_expansions: List[ValueExpansion] = field(default_factory=list)


def linearize_trajectory(traj, model, cost, second_order=False):
    """Cost and dynamics derivatives at every step of ``traj``."""
    running, dynamics = [], []
    theta = traj.params
    for t in range(traj.horizon):
        x, u = traj.states[t], traj.controls[t]
        running.append(cost.running_expansion(x, u, theta, t).check(
            model.state_dim, model.control_dim, model.param_dim, t))
        dynamics.append(model.derivatives(x, u, theta, t, second_order=second_order))
    terminal = cost.terminal_expansion(traj.states[-1], theta).check(
        model.state_dim, model.param_dim, traj.horizon)
    return TrajectoryDerivatives(running=running, dynamics=dynamics, terminal=terminal)


def q_expansion(costd, dynd, v_next, mu=0.0, full_second_order=False):
    """
    Second-order expansion of ``Q_t = L_t + V_{t+1}(F_t)``.

    ``Vxx_{t+1} + mu I`` is used inside every product with ``Fx, Fu, Ftheta``.
    With ``full_second_order`` the contractions of ``Vx_{t+1}`` with the
    dynamics tensors are added.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    Fx, Fu, Ft = dynd.Fx, dynd.Fu, dynd.Ftheta
    n_x = Fx.shape[0]
    if v_next.Vx.shape != (n_x,) or v_next.Vtheta.shape != (Ft.shape[1],):
        raise ShapeError(
            f"value expansion has Vx {v_next.Vx.shape}, Vtheta {v_next.Vtheta.shape}; "
            f"dynamics expect ({n_x},), ({Ft.shape[1]},)")
    Vx, Vt = v_next.Vx, v_next.Vtheta
    Vxx = v_next.Vxx + mu * np.eye(n_x) if mu else v_next.Vxx
    Vxt = v_next.Vxtheta

    VxxFx, VxxFu, VxxFt = Vxx @ Fx, Vxx @ Fu, Vxx @ Ft
    FtVxt = Ft.T @ Vxt
    Q = QExpansion(
        Q0=float(costd.L0 + v_next.V0),
        Qx=costd.Lx + Fx.T @ Vx,
        Qu=costd.Lu + Fu.T @ Vx,
        Qtheta=costd.Ltheta + Vt + Ft.T @ Vx,
        Qxx=costd.Lxx + Fx.T @ VxxFx,
        Qxu=costd.Lxu + Fx.T @ VxxFu,
        Qxtheta=costd.Lxtheta + Fx.T @ Vxt + Fx.T @ VxxFt,
        Quu=costd.Luu + Fu.T @ VxxFu,
        Qutheta=costd.Lutheta + Fu.T @ Vxt + Fu.T @ VxxFt,
        Qthetatheta=costd.Lthetatheta + v_next.Vthetatheta + FtVxt + FtVxt.T + Ft.T @ VxxFt,
    )
    if full_second_order:
        if not dynd.has_second_order:
            raise ValueError("full second-order expansion needs dynamics tensors")
        contract = lambda tensor: np.einsum('i,ijk->jk', Vx, tensor)
        Q.Qxx = Q.Qxx + contract(dynd.Fxx)
        Q.Qxu = Q.Qxu + contract(dynd.Fxu)
        Q.Quu = Q.Quu + contract(dynd.Fuu)
        Q.Qxtheta = Q.Qxtheta + contract(dynd.Fxtheta)
        Q.Qutheta = Q.Qutheta + contract(dynd.Futheta)
        Q.Qthetatheta = Q.Qthetatheta + contract(dynd.Fthetatheta)
    Q.Qxx = symmetrize(Q.Qxx)
    Q.Quu = symmetrize(Q.Quu)
    Q.Qthetatheta = symmetrize(Q.Qthetatheta)
    return Q


def compute_step_gains(Q, control_bounds=None, u_nominal=None, timestep=None):
    """
    Control gains ``k, K, M`` from one factorization of ``Quu``.

    With ``control_bounds`` the feedforward ``k`` solves the box-QP on
    ``du`` and the feedback rows of clamped components are zeroed; ``K`` and
    ``M`` then come from the free block of ``Quu``.
    """
    n_u = Q.Qu.size
    n_x, n_theta = Q.Qx.size, Q.Qtheta.size
    if n_u == 0:
        return StepGains.zeros(0, n_x, n_theta)
    if control_bounds is None:
        factor = spd_factor(Q.Quu, timestep, 'controls')
        return StepGains(
            k=-spd_solve(factor, Q.Qu),
            K=-spd_solve(factor, Q.Qux),
            M=-spd_solve(factor, Q.Qutheta),
            clamped=np.zeros(n_u, dtype=bool),
        )

    # the free-block factorization inside the QP is only a test once Quu itself factors
    spd_factor(Q.Quu, timestep, 'controls')
    u_nominal = np.zeros(n_u) if u_nominal is None else np.asarray(u_nominal, dtype=float)
    box = control_bounds.shifted(u_nominal)
    try:
        result = solve_boxqp(BoxQP(Q.Quu, Q.Qu, box.lower, box.upper))
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(timestep, 'controls') from exc
    K = np.zeros((n_u, n_x))
    M = np.zeros((n_u, n_theta))
    free = result.free
    if free.any():
        K[free] = -spd_solve(result.factor, Q.Qux[free])
        M[free] = -spd_solve(result.factor, Q.Qutheta[free])
    return StepGains(k=result.x, K=K, M=M, clamped=~free)


def value_recursion(Q, gains):
    """
    Value expansion at ``t`` from ``Q_t`` and the gains applied at ``t``.

    Uses the general substitution form that stays valid when the gains were
    computed from a regularized or box-constrained problem; it collapses to
    the Schur-complement form for exact unconstrained minimizers.
    """
    k, K, M = gains.k, gains.K, gains.M
    Quu_k = Q.Quu @ k
    Quu_K = Q.Quu @ K
    Quu_M = Q.Quu @ M
    V0 = Q.Q0 + k @ Q.Qu + 0.5 * k @ Quu_k
    Vx = Q.Qx + K.T @ Q.Qu + Q.Qxu @ k + K.T @ Quu_k
    Vtheta = Q.Qtheta + M.T @ Q.Qu + Q.Qthetau @ k + M.T @ Quu_k
    Vxx = Q.Qxx + Q.Qxu @ K + K.T @ Q.Qux + K.T @ Quu_K
    Vxtheta = Q.Qxtheta + Q.Qxu @ M + K.T @ Q.Qutheta + K.T @ Quu_M
    Vthetatheta = Q.Qthetatheta + Q.Qthetau @ M + M.T @ Q.Qutheta + M.T @ Quu_M
    return ValueExpansion(
        V0=float(V0), Vx=Vx, Vtheta=Vtheta, Vxx=symmetrize(Vxx), Vxtheta=Vxtheta,
        Vthetatheta=symmetrize(Vthetatheta),
    )


def parameter_gain(Q1, gains1, nu=0.0, param_bounds=None, theta_nominal=None):
    """
    Parameter step ``m`` minimizing the t=0 value expansion over ``dtheta``.

    ``Vtheta1`` and ``Vthetatheta1`` are the t=0 value derivatives with the
    first control eliminated through ``gains1`` (the Schur complement of
    ``Quu`` when unconstrained); ``nu I`` is added to the Hessian. With
    ``param_bounds`` the step solves the box-QP so ``theta + m`` stays inside.
    ``psi = -m' Vtheta1`` is the parameter Newton decrement.
    """
    n_theta = Q1.Qtheta.size
    if n_theta == 0:
        return ParameterGain.empty()
    v1 = value_recursion(Q1, gains1)
    hessian = v1.Vthetatheta + nu * np.eye(n_theta) if nu else v1.Vthetatheta
    gradient = v1.Vtheta
    factor = spd_factor(hessian, 0, 'parameters')
    if param_bounds is None:
        m = -spd_solve(factor, gradient)
        clamped = np.zeros(n_theta, dtype=bool)
    else:
        theta_nominal = np.zeros(n_theta) if theta_nominal is None else np.asarray(theta_nominal, dtype=float)
        box = param_bounds.shifted(theta_nominal)
        try:
            result = solve_boxqp(BoxQP(hessian, gradient, box.lower, box.upper))
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(0, 'parameters') from exc
        m = result.x
        # land exactly on active bounds
        at_lower = result.clamped & (m < 0)
        at_upper = result.clamped & (m > 0)
        m[at_lower] = box.lower[at_lower]
        m[at_upper] = box.upper[at_upper]
        clamped = result.clamped
    psi = max(0.0, float(-m @ gradient))
    return ParameterGain(m=m, Vthetatheta1=hessian, Vtheta1=gradient, psi=psi, clamped=clamped)


def backward_pass(traj, model, cost, reg, options=None, derivatives=None):
    """
    Run the backward recursion along ``traj``.

    Frozen steps propagate the value expansion with zero gains and contribute
    ``lambda_t = 0``. Raises :class:`NotPositiveDefinite` (carrying the
    timestep and block) so the caller can escalate ``mu`` or ``nu`` and retry.
    """
    options = options or BackwardOptions()
    if derivatives is None:
        derivatives = linearize_trajectory(traj, model, cost, options.full_second_order)
    n_x, n_u, n_theta = model.state_dim, model.control_dim, model.param_dim
    horizon = traj.horizon

    value = ValueExpansion.from_terminal(derivatives.terminal)
    steps = [None] * horizon
    decrements = np.zeros(horizon)
    q_expansions = [None] * horizon
    values = [None] * (horizon + 1)
    values[horizon] = value
    first_q = first_gains = None

    for t in range(horizon - 1, -1, -1):
        costd, dynd = derivatives.running[t], derivatives.dynamics[t]
        Q = q_expansion(costd, dynd, value, 0.0, options.full_second_order)
        if options.is_frozen(t) or n_u == 0:
            gains = StepGains.zeros(n_u, n_x, n_theta)
        else:
            Q_reg = q_expansion(costd, dynd, value, reg.mu, options.full_second_order) if reg.mu else Q
            gains = compute_step_gains(Q_reg, options.control_bounds, traj.controls[t], timestep=t)
            decrements[t] = max(0.0, float(-gains.k @ Q.Qu))
        value = value_recursion(Q, gains)
        steps[t] = gains
        q_expansions[t] = Q
        values[t] = value
        if t == 0:
            first_q, first_gains = Q, gains

    pgain = parameter_gain(first_q, first_gains, reg.nu, options.param_bounds, traj.params) \
        if n_theta else ParameterGain.empty()
    schedule = GainSchedule(steps=steps, parameter_gain=pgain, decrements=decrements)
    logger.debug("backward pass: sum lambda %.3e, psi %.3e, mu %.1e, nu %.1e",
                 schedule.total_decrement, schedule.psi, reg.mu, reg.nu)
    return BackwardPassResult(schedule=schedule, q_expansions=q_expansions, value_expansions=values)
