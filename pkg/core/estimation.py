"""
Moving-horizon estimation combined with model-predictive control.

At every plant step one parameterized problem is solved over the last ``W``
observed transitions followed by ``T_mpc`` planned steps. The first ``W``
steps carry the recorded controls (frozen) and the weighted prediction
residuals as running cost; the remaining steps carry the MPC cost from the
current plant state. The parameters are shared, so one solve both refits the
model and replans with it.
"""
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .boxqp import Bounds
from .dynamics import CostDerivatives, CostModel, DynamicsDerivatives, ParameterizedModel, TerminalCostDerivatives
from .exceptions import ShapeError
from .linalg import is_positive_definite, spd_factor, spd_solve
from .solver import Problem, SolverConfig, SolveStatus, solve

logger = logging.getLogger(__name__)

RESIDUAL_FORMS = ('chain', 'one_step')


def _spd(name, matrix, size):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape != (size, size):
        raise ShapeError(f"{name} has shape {matrix.shape}, expected ({size}, {size})")
    if size and (not np.allclose(matrix, matrix.T) or not is_positive_definite(matrix)):
        raise ValueError(f"{name} must be symmetric positive definite")
    return matrix


def _inverse(matrix):
    if matrix.size == 0:
        return matrix.copy()
    return spd_solve(spd_factor(matrix), np.eye(matrix.shape[0]))


@dataclass(frozen=True)
class EstimationPrior:
    theta_hat: np.ndarray
    Sigma_theta: np.ndarray
    x1_hat: np.ndarray
    Sigma_x1: np.ndarray
    Sigma_w: np.ndarray

    def __post_init__(self):
        theta_hat = np.asarray(self.theta_hat, dtype=float).reshape(-1)
        x1_hat = np.asarray(self.x1_hat, dtype=float).reshape(-1)
        n_theta, n_x = theta_hat.size, x1_hat.size
        object.__setattr__(self, 'theta_hat', theta_hat)
        object.__setattr__(self, 'x1_hat', x1_hat)
        object.__setattr__(self, 'Sigma_theta', _spd('Sigma_theta', self.Sigma_theta, n_theta))
        object.__setattr__(self, 'Sigma_x1', _spd('Sigma_x1', self.Sigma_x1, n_x))
        object.__setattr__(self, 'Sigma_w', _spd('Sigma_w', self.Sigma_w, n_x))

    @classmethod
    def weak(cls, theta_hat, x1_hat, noise_std=0.01, param_std=10.0, state_std=0.01):
        """Diagonal covariances ``noise_std^2 I``, ``param_std^2 I`` and ``state_std^2 I``."""
        theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
        x1_hat = np.asarray(x1_hat, dtype=float).reshape(-1)
        n_theta, n_x = theta_hat.size, x1_hat.size
        return cls(
            theta_hat=theta_hat, Sigma_theta=param_std ** 2 * np.eye(n_theta),
            x1_hat=x1_hat, Sigma_x1=state_std ** 2 * np.eye(n_x), Sigma_w=noise_std ** 2 * np.eye(n_x),
        )

    @property
    def W_theta(self):
        return _inverse(self.Sigma_theta)

    @property
    def W_x1(self):
        return _inverse(self.Sigma_x1)

    @property
    def W_w(self):
        return _inverse(self.Sigma_w)


@dataclass(frozen=True)
class RecedingHorizonConfig:
    estimation_horizon: int = 100
    mpc_horizon: int = 100
    total_steps: int = 200
    noise_seed: int = 0
    noise_scale: float = 1.0
    estimate_initial_state: bool = False
    residual_form: str = 'chain'
    # only used to label report rows with physical time
    dt: float = 1.0

    def __post_init__(self):
        if self.estimation_horizon < 1 or self.mpc_horizon < 1:
            raise ValueError("estimation_horizon and mpc_horizon must be at least 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        if self.residual_form not in RESIDUAL_FORMS:
            raise ValueError(f"residual_form must be one of {RESIDUAL_FORMS}")


class ObservationWindow:
    """The last ``capacity`` observed transitions ``(x_t, u_t, x_{t+1})``."""

    def __init__(self, capacity, initial_state):
        if capacity < 1:
            raise ValueError("window capacity must be at least 1")
        self.capacity = capacity
        self._states = deque([np.array(initial_state, dtype=float)], maxlen=capacity + 1)
        self._controls = deque(maxlen=capacity)

    def append(self, control, next_state):
        self._controls.append(np.array(control, dtype=float).reshape(-1))
        self._states.append(np.array(next_state, dtype=float))

    def __len__(self):
        return len(self._controls)

    @property
    def states(self):
        return np.array(self._states)

    @property
    def controls(self):
        if not self._controls:
            return np.zeros((0, 0))
        return np.array(self._controls)

    @classmethod
    def from_arrays(cls, states, controls, capacity=None):
        states = np.asarray(states, dtype=float)
        controls = np.asarray(controls, dtype=float)
        if controls.ndim == 1:
            controls = controls[:, None]
        if len(states) != len(controls) + 1:
            raise ShapeError("a window needs exactly one more state than controls")
        window = cls(capacity or max(1, len(controls)), states[0])
        for u, x in zip(controls, states[1:]):
            window.append(u, x)
        return window


def _predict(model, window, theta, x1_est, residual_form):
    """Yield ``(t, base_state, prediction)`` for every transition in the window."""
    states, controls = window.states, window.controls
    x = np.asarray(x1_est, dtype=float)
    for t in range(len(window)):
        base = x if residual_form == 'chain' else states[t]
        if residual_form == 'one_step' and t == 0:
            base = np.asarray(x1_est, dtype=float)
        prediction = model.step(base, controls[t], theta, t)
        yield t, base, prediction
        x = prediction


def estimation_cost(window, theta, x1_est, prior, model, residual_form='chain'):
    """
    ``0.5 sum |x_obs_{t+1} - F(x_t, u_t; theta)|^2_{W_w}`` plus the prior terms.

    In the chain form ``x_t`` is the model prediction started from
    ``x1_est``; in the one-step form it is the observed state.
    """
    if len(window) == 0:
        raise ValueError("estimation cost needs a nonempty window")
    theta = np.asarray(theta, dtype=float)
    Ww = prior.W_w
    observed = window.states
    total = 0.0
    for t, _, prediction in _predict(model, window, theta, x1_est, residual_form):
        r = observed[t + 1] - prediction
        total += 0.5 * float(r @ Ww @ r)
    dtheta = theta - prior.theta_hat
    dx1 = np.asarray(x1_est, dtype=float) - prior.x1_hat
    return total + 0.5 * float(dtheta @ prior.W_theta @ dtheta) + 0.5 * float(dx1 @ prior.W_x1 @ dx1)


@dataclass
class CombinedProblem:
    problem: Problem
    window_length: int
    param_dim: int
    augmented: bool

    def theta_estimate(self, params):
        return np.asarray(params)[:self.param_dim]

    def x1_estimate(self, params):
        return np.asarray(params)[self.param_dim:] if self.augmented else None


def _pad_theta(derivs, extra):
    """Append ``extra`` zero parameter columns to cost derivatives."""
    if not extra:
        return derivs
    n_x, n_u = derivs.Lx.size, derivs.Lu.size
    n_theta = derivs.Ltheta.size
    Ltt = np.zeros((n_theta + extra, n_theta + extra))
    Ltt[:n_theta, :n_theta] = derivs.Lthetatheta
    return CostDerivatives(
        L0=derivs.L0, Lx=derivs.Lx, Lu=derivs.Lu, Ltheta=np.concatenate([derivs.Ltheta, np.zeros(extra)]),
        Lxx=derivs.Lxx, Lxu=derivs.Lxu, Lxtheta=np.hstack([derivs.Lxtheta, np.zeros((n_x, extra))]),
        Luu=derivs.Luu, Lutheta=np.hstack([derivs.Lutheta, np.zeros((n_u, extra))]), Lthetatheta=Ltt,
    )


def build_combined_problem(window, prior, mpc_cost, current_state, config, model, controls=None, theta=None,
                           control_bounds=None, param_bounds=None):
    """
    Assemble the joint estimation + control problem for one plant step.

    Steps ``0..W-1`` replay the window with frozen recorded controls; the
    transition out of step ``W-1`` resets to ``current_state`` so the plan
    starts from the true plant state. With ``estimate_initial_state`` the
    window-initial state is appended to ``theta`` and fed to the first
    transition. Residual cost derivatives use the Gauss-Newton Hessian
    ``J' W_w J``.
    """
    n_x, n_u, n_theta = model.state_dim, model.control_dim, model.param_dim
    W = len(window)
    if W > config.estimation_horizon:
        raise ShapeError(f"window holds {W} transitions, more than the estimation horizon")
    observed = window.states
    if observed.shape[1] != n_x or (W and window.controls.shape[1] != n_u):
        raise ShapeError("window dimensions do not match the model")
    if prior.theta_hat.size != n_theta or prior.x1_hat.size != n_x:
        raise ShapeError("prior dimensions do not match the model")
    current_state = np.asarray(current_state, dtype=float)
    augmented = config.estimate_initial_state
    chain = config.residual_form == 'chain'
    n_aug = n_x if augmented else 0
    n_total = n_theta + n_aug
    T_mpc = config.mpc_horizon
    horizon = W + T_mpc
    Ww, Wt, Wx1 = prior.W_w, prior.W_theta, prior.W_x1

    def split(params):
        params = np.asarray(params, dtype=float)
        return params[:n_theta], params[n_theta:]

    def residual_base(x, params, t):
        """State the transition at window step ``t`` starts from, and whether it is ``x`` itself."""
        if augmented and t == 0:
            return split(params)[1], False
        if not chain:
            return observed[t], False
        return x, True

    # dynamics
    def step(x, u, params, t):
        theta = split(params)[0]
        if t < W:
            if t == W - 1:
                return current_state.copy()
            if not chain:
                return observed[t + 1].copy()
            base, _ = residual_base(x, params, t)
            return model.step(base, u, theta, t)
        return model.step(x, u, theta, t)

    def jacobian(x, u, params, t):
        theta, _ = split(params)
        if t < W and (t == W - 1 or not chain):
            return DynamicsDerivatives(np.zeros((n_x, n_x)), np.zeros((n_x, n_u)), np.zeros((n_x, n_total)))
        base, uses_x = residual_base(x, params, t) if t < W else (x, True)
        d = model.derivatives(base, u, theta, t)
        Ftheta = np.hstack([d.Ftheta, np.zeros((n_x, n_aug))])
        Fx = d.Fx
        if not uses_x:
            Ftheta[:, n_theta:] = d.Fx
            Fx = np.zeros((n_x, n_x))
        return DynamicsDerivatives(Fx=Fx, Fu=d.Fu, Ftheta=Ftheta)

    combined_model = ParameterizedModel(n_x, n_u, n_total, step, jacobian=jacobian, name=f'{model.name}+mhe')

    # cost
    def prior_value(params):
        theta, x1 = split(params)
        dtheta = theta - prior.theta_hat
        value = 0.5 * float(dtheta @ Wt @ dtheta)
        if augmented:
            dx1 = x1 - prior.x1_hat
            value += 0.5 * float(dx1 @ Wx1 @ dx1)
        return value

    def running(x, u, params, t):
        theta = split(params)[0]
        value = prior_value(params) if t == 0 else 0.0
        if t < W:
            base, _ = residual_base(x, params, t)
            r = observed[t + 1] - model.step(base, u, theta, t)
            return value + 0.5 * float(r @ Ww @ r)
        return value + mpc_cost.running(x, u, theta, t - W)

    def terminal(x, params):
        return mpc_cost.terminal(x, split(params)[0])

    def add_prior(derivs, params):
        theta, x1 = split(params)
        derivs.L0 += prior_value(params)
        gradient = np.concatenate([Wt @ (theta - prior.theta_hat), Wx1 @ (x1 - prior.x1_hat) if augmented else []])
        derivs.Ltheta = derivs.Ltheta + gradient
        hessian = np.zeros((n_total, n_total))
        hessian[:n_theta, :n_theta] = Wt
        if augmented:
            hessian[n_theta:, n_theta:] = Wx1
        derivs.Lthetatheta = derivs.Lthetatheta + hessian
        return derivs

    def residual_derivatives(x, u, params, t):
        theta, _ = split(params)
        base, uses_x = residual_base(x, params, t)
        r = observed[t + 1] - model.step(base, u, theta, t)
        d = model.derivatives(base, u, theta, t)
        Jx = d.Fx if uses_x else np.zeros((n_x, n_x))
        Jtheta = np.hstack([d.Ftheta, np.zeros((n_x, n_aug))])
        if augmented and t == 0:
            Jtheta[:, n_theta:] = d.Fx
        Wr = Ww @ r
        WJx, WJu, WJt = Ww @ Jx, Ww @ d.Fu, Ww @ Jtheta
        return CostDerivatives(
            L0=0.5 * float(r @ Wr), Lx=-Jx.T @ Wr, Lu=-d.Fu.T @ Wr, Ltheta=-Jtheta.T @ Wr,
            Lxx=Jx.T @ WJx, Lxu=Jx.T @ WJu, Lxtheta=Jx.T @ WJt,
            Luu=d.Fu.T @ WJu, Lutheta=d.Fu.T @ WJt, Lthetatheta=Jtheta.T @ WJt,
        )

    def running_derivatives(x, u, params, t):
        if t < W:
            derivs = residual_derivatives(x, u, params, t)
        else:
            derivs = _pad_theta(mpc_cost.running_expansion(x, u, split(params)[0], t - W), n_aug)
        return add_prior(derivs, params) if t == 0 else derivs

    def terminal_derivatives(x, params):
        d = mpc_cost.terminal_expansion(x, split(params)[0])
        if not n_aug:
            return d
        Ptt = np.zeros((n_total, n_total))
        Ptt[:n_theta, :n_theta] = d.phithetatheta
        return TerminalCostDerivatives(
            phi0=d.phi0, phix=d.phix, phitheta=np.concatenate([d.phitheta, np.zeros(n_aug)]), phixx=d.phixx,
            phixtheta=np.hstack([d.phixtheta, np.zeros((n_x, n_aug))]), phithetatheta=Ptt,
        )

    combined_cost = CostModel(running, terminal, running_derivatives, terminal_derivatives)

    # initial guess
    plan = np.zeros((T_mpc, n_u)) if controls is None else np.asarray(controls, dtype=float).reshape(T_mpc, n_u)
    recorded = window.controls.reshape(W, n_u)
    theta0 = prior.theta_hat if theta is None else np.asarray(theta, dtype=float)
    if augmented:
        theta0 = np.concatenate([theta0[:n_theta], observed[0]])
    x1 = observed[0] if W else current_state
    frozen = np.zeros(horizon, dtype=bool)
    frozen[:W] = True
    if param_bounds is not None and augmented:
        param_bounds = Bounds(np.concatenate([param_bounds.lower, np.full(n_x, -np.inf)]),
                              np.concatenate([param_bounds.upper, np.full(n_x, np.inf)]))
    if param_bounds is not None:
        theta0 = param_bounds.clip(theta0)
    problem = Problem(
        model=combined_model, cost=combined_cost, x1=x1, controls=np.vstack([recorded, plan]),
        params=theta0, frozen=frozen, control_bounds=control_bounds, param_bounds=param_bounds,
    )
    return CombinedProblem(problem=problem, window_length=W, param_dim=n_theta, augmented=augmented)


@dataclass
class EstimationStep:
    step: int
    time: float
    state: np.ndarray
    theta: np.ndarray
    control: np.ndarray
    cost: float
    status: str
    iterations: int

    @property
    def failed(self):
        return self.status == SolveStatus.LINE_SEARCH_FAILED.value


@dataclass
class EstimationReport:
    steps: List[EstimationStep] = field(default_factory=list)
    final_state: Optional[np.ndarray] = None

    @property
    def theta_history(self):
        return np.array([s.theta for s in self.steps])

    @property
    def state_history(self):
        return np.array([s.state for s in self.steps])

    @property
    def failed_steps(self):
        return [s.step for s in self.steps if s.failed]

    def first_step_within(self, truth, rel_tol):
        """First step from which every later estimate is within ``rel_tol`` of ``truth``."""
        truth = np.asarray(truth, dtype=float)
        inside = [bool(np.all(np.abs(s.theta - truth) <= rel_tol * np.abs(truth))) for s in self.steps]
        for k in range(len(inside)):
            if all(inside[k:]):
                return k
        return None


def run_receding_horizon(plant, true_theta, controller, prior, mpc_cost, x0, config, solver_config=None,
                         initial_controls=None, theta0=None, control_bounds=None, param_bounds=None):
    """
    Run the combined estimator and controller against a simulated plant.

    Each step solves the combined problem warm-started from the previous
    plan shifted by one, applies the first planned control to the plant and
    adds process noise ``w ~ N(0, noise_scale^2 Sigma_w)`` from a generator
    seeded with ``config.noise_seed``. A solve that ends in line-search
    failure is recorded and the warm-start control is applied instead.
    """
    if plant.state_dim != controller.state_dim or plant.control_dim != controller.control_dim:
        raise ShapeError("plant and controller must share state and control dimensions")
    solver_config = solver_config or SolverConfig()
    rng = np.random.default_rng(config.noise_seed)
    noise_factor = config.noise_scale * np.linalg.cholesky(prior.Sigma_w)
    n_u = controller.control_dim
    true_theta = np.asarray(true_theta, dtype=float)
    theta_est = prior.theta_hat.copy() if theta0 is None else np.asarray(theta0, dtype=float)
    if initial_controls is None:
        plan = np.zeros((config.mpc_horizon, n_u))
    else:
        plan = np.asarray(initial_controls, dtype=float).reshape(config.mpc_horizon, n_u).copy()
    state = np.asarray(x0, dtype=float).copy()
    window = ObservationWindow(config.estimation_horizon, state)
    report = EstimationReport()

    for k in range(config.total_steps):
        window_prior = replace(prior, x1_hat=window.states[0])
        combined = build_combined_problem(
            window, window_prior, mpc_cost, state, config, controller, plan, theta_est,
            control_bounds=control_bounds, param_bounds=param_bounds)
        result = solve(combined.problem, solver_config)
        W = combined.window_length
        if result.status == SolveStatus.LINE_SEARCH_FAILED:
            logger.warning("step %d: solve failed, applying the warm-start control", k)
            control = plan[0].copy()
        else:
            theta_est = combined.theta_estimate(result.params).copy()
            plan = result.trajectory.controls[W:].copy()
            control = plan[0].copy()
        stage_cost = float(mpc_cost.running(state, control, theta_est, 0))
        report.steps.append(EstimationStep(
            step=k, time=k * config.dt, state=state.copy(), theta=theta_est.copy(), control=control,
            cost=stage_cost, status=result.status.value, iterations=result.iterations))
        logger.info("step %d: theta %s, %s in %d iterations", k, np.array2string(theta_est, precision=5),
                    result.status.value, result.iterations)

        noise = noise_factor @ rng.standard_normal(state.size)
        state = np.asarray(plant.step(state, control, true_theta, k), dtype=float) + noise
        window.append(control, state)
        plan = np.vstack([plan[1:], plan[-1:]])

    report.final_state = state
    return report
