"""
Outer loop of parameterized DDP.

Each iteration linearizes the nominal, runs the backward pass (escalating
``mu`` / ``nu`` when a Hessian block fails to factor), then backtracks over
``epsilon = 1, rho, rho^2, ...`` until the rollout meets the sufficient
decrease test ``dJ <= -kappa * epsilon * decrement``. The update scheme
decides per iteration whether controls, parameters or both move.
"""
import enum
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .backward import BackwardOptions, RegularizationState, backward_pass, linearize_trajectory
from .boxqp import Bounds
from .dynamics import Trajectory, check_dimensions, rollout
from .exceptions import DivergedRollout, NotPositiveDefinite, ShapeError

logger = logging.getLogger(__name__)


class Scheme(str, enum.Enum):
    SIMULTANEOUS = 'simultaneous'
    ALTERNATING = 'alternating'
    CONTROLS_FIRST = 'controls_first'


class Phase(str, enum.Enum):
    SIMULTANEOUS = 'simultaneous'
    CONTROLS = 'controls'
    PARAMETERS = 'parameters'
    WARM_START = 'warm_start'

    @property
    def updates_controls(self):
        return self != Phase.PARAMETERS

    @property
    def updates_params(self):
        return self in (Phase.SIMULTANEOUS, Phase.PARAMETERS)


class SolveStatus(str, enum.Enum):
    CONVERGED = 'converged'
    MAX_ITERATIONS = 'max_iterations'
    LINE_SEARCH_FAILED = 'line_search_failed'


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 500
    rho: float = 0.5
    epsilon_min: float = 1e-4
    kappa: float = 1e-4
    tolerance: float = 1e-6
    scheme: Scheme = Scheme.SIMULTANEOUS
    # controls-first: parameters move once sum(lambda) drops below this
    inner_tolerance: float = 1e-4
    warm_start_control_only_iters: int = 0
    full_second_order: bool = False
    mu_init: float = 0.0
    nu_init: float = 0.0
    reg_min: float = 1e-6
    reg_max: float = 1e10
    reg_factor: float = 8.0
    max_failures_at_cap: int = 2

    def __post_init__(self):
        object.__setattr__(self, 'scheme', Scheme(self.scheme))
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if not 0 < self.epsilon_min <= 1:
            raise ValueError("epsilon_min must lie in (0, 1]")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.tolerance <= 0 or self.inner_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.warm_start_control_only_iters < 0:
            raise ValueError("warm_start_control_only_iters must be nonnegative")
        if self.mu_init < 0 or self.nu_init < 0:
            raise ValueError("initial regularization must be nonnegative")
        if self.max_failures_at_cap < 1:
            raise ValueError("max_failures_at_cap must be at least 1")

    def epsilons(self):
        """The backtracking schedule ``1, rho, rho^2, ...`` down to ``epsilon_min``."""
        schedule = []
        epsilon = 1.0
        while epsilon >= self.epsilon_min * (1.0 - 1e-12):
            schedule.append(epsilon)
            epsilon *= self.rho
        return schedule

    def initial_regularization(self):
        return RegularizationState(
            mu=self.mu_init, nu=self.nu_init, minimum=self.reg_min,
            maximum=self.reg_max, factor=self.reg_factor,
        )


@dataclass
class Problem:
    """
    One optimal-control problem: dynamics, cost, initial state, initial guess.

    ``frozen`` marks timesteps whose controls are recorded history. Bounds are
    :class:`~core.boxqp.Bounds` on each control and on ``theta``.
    """
    model: object
    cost: object
    x1: np.ndarray
    controls: np.ndarray
    params: np.ndarray
    frozen: Optional[np.ndarray] = None
    control_bounds: Optional[Bounds] = None
    param_bounds: Optional[Bounds] = None

    def __post_init__(self):
        self.x1, self.controls, self.params = check_dimensions(self.model, self.x1, self.controls, self.params)
        if self.frozen is not None:
            self.frozen = np.asarray(self.frozen, dtype=bool).reshape(-1)
            if self.frozen.shape != (self.horizon,):
                raise ShapeError(f"frozen mask has shape {self.frozen.shape}, expected ({self.horizon},)")
        if self.control_bounds is not None and self.control_bounds.size != self.model.control_dim:
            raise ShapeError("control bounds do not match the control dimension")
        if self.param_bounds is not None:
            if self.param_bounds.size != self.model.param_dim:
                raise ShapeError("parameter bounds do not match the parameter dimension")
            if not self.param_bounds.contains(self.params):
                raise ValueError("initial parameters violate the parameter bounds")

    @property
    def horizon(self):
        return self.controls.shape[0]

    @property
    def has_free_controls(self):
        if self.model.control_dim == 0:
            return False
        return self.frozen is None or not bool(np.all(self.frozen))

    def backward_options(self, full_second_order=False):
        return BackwardOptions(
            full_second_order=full_second_order, control_bounds=self.control_bounds,
            param_bounds=self.param_bounds, frozen=self.frozen,
        )

    def initial_rollout(self):
        controls = self.controls
        if self.control_bounds is not None:
            controls = self.control_bounds.clip(controls)
        return rollout(self.model, self.cost, self.x1, controls, self.params)


@dataclass
class IterationRecord:
    iteration: int
    accepted: bool
    cost: float
    epsilon: Optional[float]
    mu: float
    nu: float
    sum_lambda: float
    psi: float
    phase: str
    wall_time: float
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class SolveReport:
    records: List[IterationRecord]
    trajectory: Trajectory
    status: SolveStatus
    wall_time: float

    @property
    def params(self):
        return self.trajectory.params

    @property
    def final_cost(self):
        return self.trajectory.cost

    @property
    def iterations(self):
        return len(self.records)

    @property
    def accepted_iterations(self):
        return sum(1 for record in self.records if record.accepted)

    @property
    def converged(self):
        return self.status == SolveStatus.CONVERGED

    @property
    def accepted_costs(self):
        return [record.cost for record in self.records if record.accepted]

    @property
    def final_decrement(self):
        """``sum(lambda) + psi`` of the last completed backward pass."""
        for record in reversed(self.records):
            if np.isfinite(record.sum_lambda):
                return record.sum_lambda + record.psi
        return float('nan')


@dataclass
class LineSearchResult:
    trajectory: Optional[Trajectory]
    epsilon: Optional[float]
    attempts: int

    @property
    def accepted(self):
        return self.trajectory is not None


def forward_pass(problem, nominal, schedule, epsilon, update_controls=True, update_params=True):
    """
    Roll out the updated policy around ``nominal``.

    ``dtheta = epsilon m`` when parameters move, then
    ``du_t = epsilon k_t [update_controls] + K_t dx_t + M_t dtheta``
    (zero on frozen steps), with controls clipped to the control bounds.
    """
    if not (update_controls or update_params):
        raise ValueError("forward pass needs at least one of controls or parameters to update")
    model, cost = problem.model, problem.cost
    theta_bar = nominal.params
    dtheta = epsilon * schedule.m if (update_params and theta_bar.size) else np.zeros_like(theta_bar)
    theta = theta_bar + dtheta
    if problem.param_bounds is not None:
        theta = problem.param_bounds.clip(theta)
        dtheta = theta - theta_bar

    horizon = nominal.horizon
    states = np.empty_like(nominal.states)
    controls = np.empty_like(nominal.controls)
    states[0] = nominal.states[0]
    total = 0.0
    for t in range(horizon):
        gains = schedule.steps[t]
        if problem.frozen is not None and problem.frozen[t]:
            u = nominal.controls[t].copy()
        else:
            dx = states[t] - nominal.states[t]
            du = gains.K @ dx + gains.M @ dtheta
            if update_controls:
                du = du + epsilon * gains.k
            u = nominal.controls[t] + du
            if problem.control_bounds is not None:
                u = problem.control_bounds.clip(u)
        controls[t] = u
        total += cost.running(states[t], u, theta, t)
        try:
            x_next = model.step(states[t], u, theta, t)
        except DivergedRollout as exc:
            raise DivergedRollout(t + 1) from exc
        if not np.all(np.isfinite(x_next)):
            raise DivergedRollout(t + 1)
        states[t + 1] = x_next
    total += cost.terminal(states[horizon], theta)
    if not np.isfinite(total):
        raise DivergedRollout(horizon, "non-finite cost in forward pass")
    return Trajectory(states=states, controls=controls, params=theta, cost=float(total))


def expected_reduction(lambdas, psi, epsilon):
    """Predicted cost change ``-epsilon (1 - epsilon / 2) (sum(lambda) + psi)``."""
    return -epsilon * (1.0 - 0.5 * epsilon) * (float(np.sum(lambdas)) + psi)


def phase_decrement(schedule, update_controls, update_params):
    decrement = 0.0
    if update_controls:
        decrement += schedule.total_decrement
    if update_params:
        decrement += schedule.psi
    return decrement


def line_search(problem, nominal, schedule, config, update_controls=True, update_params=True):
    """
    Backtrack over ``config.epsilons()`` and return the first candidate with
    ``J - J_nominal <= -kappa * epsilon * decrement``.

    Only the decrements of the quantities being updated enter the bound.
    Diverged rollouts count as rejected candidates.
    """
    decrement = phase_decrement(schedule, update_controls, update_params)
    attempts = 0
    for epsilon in config.epsilons():
        attempts += 1
        try:
            candidate = forward_pass(problem, nominal, schedule, epsilon, update_controls, update_params)
        except DivergedRollout as exc:
            logger.debug("forward pass diverged at timestep %s for epsilon %.3g", exc.timestep, epsilon)
            continue
        if candidate.cost - nominal.cost <= -config.kappa * epsilon * decrement:
            return LineSearchResult(candidate, epsilon, attempts)
    return LineSearchResult(None, None, attempts)


class _PhaseTracker:
    """Decides which quantities move on the next iteration."""

    def __init__(self, problem, config):
        self.config = config
        self.has_params = problem.model.param_dim > 0
        self.has_controls = problem.has_free_controls
        self.warm_start_left = config.warm_start_control_only_iters if self.has_params else 0
        self.next_alternate = Phase.CONTROLS
        self.last_accepted = None

    def choose(self, schedule):
        if not self.has_params:
            return Phase.CONTROLS
        if not self.has_controls:
            return Phase.PARAMETERS

        half_tol = 0.5 * self.config.tolerance
        sum_lambda, psi = schedule.total_decrement, schedule.psi
        if self.warm_start_left > 0:
            if sum_lambda > half_tol:
                return Phase.WARM_START
            self.warm_start_left = 0

        scheme = self.config.scheme
        if scheme == Scheme.SIMULTANEOUS:
            return Phase.SIMULTANEOUS
        if scheme == Scheme.ALTERNATING:
            phase = self.next_alternate
        elif self.last_accepted == Phase.PARAMETERS or sum_lambda >= self.config.inner_tolerance:
            # one parameter step, then back to the controls
            phase = Phase.CONTROLS
        else:
            phase = Phase.PARAMETERS
        # a phase with nothing left to gain hands over to the other one
        if phase == Phase.CONTROLS and sum_lambda <= half_tol:
            phase = Phase.PARAMETERS
        elif phase == Phase.PARAMETERS and psi <= half_tol:
            phase = Phase.CONTROLS
        return phase

    def accepted(self, phase):
        self.last_accepted = phase
        if phase == Phase.WARM_START:
            self.warm_start_left -= 1
        elif phase == Phase.CONTROLS:
            self.next_alternate = Phase.PARAMETERS
        elif phase == Phase.PARAMETERS:
            self.next_alternate = Phase.CONTROLS


def _escalate(reg, block, updates_params):
    if block == 'parameters':
        return reg.increase_nu()
    reg = reg.increase_mu()
    if updates_params:
        reg = reg.increase_nu()
    return reg


def regularized_backward_pass(problem, nominal, reg, options=None, derivatives=None):
    """
    Backward pass that escalates ``reg`` until every Hessian block factors.

    Returns ``(result, reg)``; raises :class:`NotPositiveDefinite` once the
    failing regularizer is at its cap.
    """
    options = options or problem.backward_options()
    while True:
        try:
            return backward_pass(nominal, problem.model, problem.cost, reg, options, derivatives), reg
        except NotPositiveDefinite as exc:
            at_cap = reg.nu_exhausted if exc.block == 'parameters' else reg.mu_exhausted
            if at_cap:
                raise
            reg = _escalate(reg, exc.block, exc.block == 'parameters')


def solve(problem, config=None, callback=None):
    """
    Run parameterized DDP on ``problem`` and return a :class:`SolveReport`.

    ``callback(iteration, nominal, backward)`` is called after every backward
    pass that completes, before the convergence test and the line search.

    Converges when ``sum(lambda) + psi < config.tolerance``. Failed backward
    or line-search attempts escalate the regularization and count as
    (rejected) iterations; ``config.max_failures_at_cap`` consecutive
    failures with ``mu`` at its cap end the solve as line-search failed.
    """
    config = config or SolverConfig()
    started = time.perf_counter()
    options = problem.backward_options(config.full_second_order)
    reg = config.initial_regularization()
    tracker = _PhaseTracker(problem, config)
    nominal = problem.initial_rollout()
    derivatives = None
    records = []
    failures_at_cap = 0
    status = SolveStatus.MAX_ITERATIONS

    for iteration in range(1, config.max_iterations + 1):
        if derivatives is None:
            derivatives = linearize_trajectory(nominal, problem.model, problem.cost, config.full_second_order)
        used_mu, used_nu = reg.mu, reg.nu
        try:
            result = backward_pass(nominal, problem.model, problem.cost, reg, options, derivatives)
        except NotPositiveDefinite as exc:
            at_cap = reg.nu_exhausted if exc.block == 'parameters' else reg.mu_exhausted
            failures_at_cap = failures_at_cap + 1 if at_cap else 0
            reg = _escalate(reg, exc.block, exc.block == 'parameters')
            records.append(IterationRecord(
                iteration, False, nominal.cost, None, used_mu, used_nu, float('nan'), float('nan'),
                'backward', time.perf_counter() - started, nominal.params.copy()))
            logger.warning("iteration %d: %s; regularization now mu=%.1e nu=%.1e", iteration, exc, reg.mu, reg.nu)
            if failures_at_cap >= config.max_failures_at_cap:
                status = SolveStatus.LINE_SEARCH_FAILED
                break
            continue

        if callback is not None:
            callback(iteration, nominal, result)
        schedule = result.schedule
        sum_lambda, psi = schedule.total_decrement, schedule.psi
        if sum_lambda + psi < config.tolerance:
            records.append(IterationRecord(
                iteration, False, nominal.cost, None, used_mu, used_nu, sum_lambda, psi,
                'converged', time.perf_counter() - started, nominal.params.copy()))
            status = SolveStatus.CONVERGED
            break

        phase = tracker.choose(schedule)
        search = line_search(problem, nominal, schedule, config, phase.updates_controls, phase.updates_params)
        if search.accepted:
            nominal = search.trajectory
            derivatives = None
            reg = reg.decrease()
            failures_at_cap = 0
            tracker.accepted(phase)
        else:
            failures_at_cap = failures_at_cap + 1 if reg.mu_exhausted else 0
            reg = _escalate(reg, 'controls', phase.updates_params)
            logger.warning("iteration %d: line search failed after %d candidates; mu=%.1e nu=%.1e",
                           iteration, search.attempts, reg.mu, reg.nu)

        records.append(IterationRecord(
            iteration, search.accepted, nominal.cost, search.epsilon, used_mu, used_nu, sum_lambda, psi,
            phase.value, time.perf_counter() - started, nominal.params.copy()))
        logger.debug("iteration %d [%s]: cost %.10g eps %s mu %.1e nu %.1e sum_lambda %.3e psi %.3e",
                     iteration, phase.value, nominal.cost, search.epsilon, used_mu, used_nu, sum_lambda, psi)
        if failures_at_cap >= config.max_failures_at_cap:
            status = SolveStatus.LINE_SEARCH_FAILED
            break

    report = SolveReport(records=records, trajectory=nominal, status=status,
                         wall_time=time.perf_counter() - started)
    logger.info("solve finished: %s after %d iterations, cost %.10g", status.value, report.iterations, nominal.cost)
    return report


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def _adjoint_sweep(traj, model, cost, derivatives=None):
    if derivatives is None:
        derivatives = linearize_trajectory(traj, model, cost)
    horizon = traj.horizon
    eta = derivatives.terminal.phix.copy()
    grad_theta = derivatives.terminal.phitheta.copy()
    grad_u = np.zeros((horizon, model.control_dim))
    for t in range(horizon - 1, -1, -1):
        costd, dynd = derivatives.running[t], derivatives.dynamics[t]
        grad_u[t] = costd.Lu + dynd.Fu.T @ eta
        grad_theta += costd.Ltheta + dynd.Ftheta.T @ eta
        eta = costd.Lx + dynd.Fx.T @ eta
    return grad_u, grad_theta


def cost_gradient_oracle(traj, model, cost, derivatives=None):
    """
    Gradients ``dJ/du_t`` along ``traj`` from one adjoint sweep.

    ``eta_T = phi_x``, ``grad_t = L_u + Fu' eta_{t+1}``,
    ``eta_t = L_x + Fx' eta_{t+1}``. Returns shape ``(T, n_u)``.
    """
    return _adjoint_sweep(traj, model, cost, derivatives)[0]


def parameter_gradient(traj, model, cost, derivatives=None):
    """Total derivative ``dJ/dtheta`` along ``traj`` with the controls held fixed."""
    return _adjoint_sweep(traj, model, cost, derivatives)[1]


@dataclass
class DescentDiagnostic:
    inner_product: float
    predicted: float
    gammas: np.ndarray


def descent_diagnostic(problem, nominal, backward, epsilon, derivatives=None):
    """
    Compare ``sum_t grad_t' du_t`` of an epsilon step with its leading-order prediction.

    ``gamma_t = Qu' Quu^-1 Qutheta = -k_t' Qutheta`` and the prediction is
    ``-epsilon sum(lambda) - epsilon (sum gamma) m``.
    """
    schedule = backward.schedule
    has_params = nominal.params.size > 0
    candidate = forward_pass(problem, nominal, schedule, epsilon, True, has_params)
    gradients = cost_gradient_oracle(nominal, problem.model, problem.cost, derivatives)
    du = candidate.controls - nominal.controls
    inner = float(np.sum(gradients * du))

    n_theta = nominal.params.size
    gammas = np.zeros((nominal.horizon, n_theta))
    for t, (Q, gains) in enumerate(zip(backward.q_expansions, schedule.steps)):
        gammas[t] = -gains.k @ Q.Qutheta
    predicted = -epsilon * schedule.total_decrement
    if has_params:
        predicted -= epsilon * float(gammas.sum(axis=0) @ schedule.m)
    return DescentDiagnostic(inner_product=inner, predicted=predicted, gammas=gammas)


@dataclass
class EpsilonSweepRow:
    epsilon: float
    measured: float
    predicted: float
    gap: float
    max_du: float
    max_dx: float
    dtheta: float


@dataclass
class EpsilonSweep:
    rows: List[EpsilonSweepRow]
    slopes: dict


def _loglog_slope(epsilons, values):
    epsilons = np.asarray(epsilons, dtype=float)
    values = np.asarray(values, dtype=float)
    usable = (values > 0) & np.isfinite(values)
    if usable.sum() < 2:
        return float('nan')
    slope, _ = np.polyfit(np.log(epsilons[usable]), np.log(values[usable]), 1)
    return float(slope)


def epsilon_sweep(problem, nominal, schedule, epsilons, update_controls=True, update_params=True):
    """
    Forward passes at each ``epsilon`` with fixed gains.

    Each row holds the measured and predicted cost change, their gap and the
    largest control, state and parameter deviations; ``slopes`` are their
    fitted log-log slopes against ``epsilon``.
    """
    update_params = update_params and nominal.params.size > 0
    lambdas = schedule.decrements if update_controls else np.zeros(1)
    psi = schedule.psi if update_params else 0.0
    rows = []
    for epsilon in epsilons:
        candidate = forward_pass(problem, nominal, schedule, epsilon, update_controls, update_params)
        measured = candidate.cost - nominal.cost
        predicted = expected_reduction(lambdas, psi, epsilon)
        du = candidate.controls - nominal.controls
        dx = candidate.states - nominal.states
        rows.append(EpsilonSweepRow(
            epsilon=float(epsilon), measured=float(measured), predicted=float(predicted),
            gap=abs(float(measured - predicted)),
            max_du=float(np.max(np.linalg.norm(du, axis=1))) if du.size else 0.0,
            max_dx=float(np.max(np.linalg.norm(dx, axis=1))),
            dtheta=float(np.linalg.norm(candidate.params - nominal.params)),
        ))
    eps = [row.epsilon for row in rows]
    slopes = {
        name: _loglog_slope(eps, [getattr(row, name) for row in rows])
        for name in ('gap', 'max_du', 'max_dx', 'dtheta')
    }
    return EpsilonSweep(rows=rows, slopes=slopes)
