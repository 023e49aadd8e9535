"""
Switching-time optimization.

A fixed sequence of continuous-time modes is wrapped into one parameterized
problem whose parameters are the durations spent in each mode. Every mode
keeps a constant number of steps ``N_i``; one step of mode ``i`` advances
physical time ``theta_i / N_i`` with fixed-size substeps of at most ``dt``.
The running cost of mode ``i`` is weighted by ``theta_i / N_i`` and the exit
cost of mode ``i`` is charged on the state that enters mode ``i + 1`` (the
last mode's exit cost is the terminal cost).
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .boxqp import Bounds
from .dynamics import (
    CostDerivatives, CostModel, DynamicsDerivatives, Integrator, ParameterizedModel,
    TerminalCostDerivatives, substep_integrate, substep_jacobians,
)
from .solver import Problem, Scheme, SolverConfig, solve

logger = logging.getLogger(__name__)

DEFAULT_SUBSTEP = 0.01
DEFAULT_WARM_START = 5


@dataclass(frozen=True)
class Mode:
    """
    One continuous-time mode.

    ``field(x, u)`` is the vector field, ``running_cost(x, u)`` the cost rate
    and ``exit_cost(x)`` the cost charged when the mode ends. The optional
    derivative callbacks return ``(A, B)``, ``(l, lx, lu, lxx, lxu, luu)``
    and ``(phi, phix, phixx)``.
    """
    field: Callable
    running_cost: Callable
    exit_cost: Callable
    field_jacobian: Optional[Callable] = None
    running_cost_derivatives: Optional[Callable] = None
    exit_cost_derivatives: Optional[Callable] = None
    name: str = 'mode'


@dataclass(frozen=True)
class ModeSequence:
    modes: Sequence[Mode]
    steps_per_mode: Sequence[int]
    state_dim: int
    control_dim: int
    dt: float = DEFAULT_SUBSTEP
    scheme: Integrator = Integrator.RK4

    def __post_init__(self):
        object.__setattr__(self, 'modes', tuple(self.modes))
        object.__setattr__(self, 'steps_per_mode', tuple(int(n) for n in self.steps_per_mode))
        object.__setattr__(self, 'scheme', Integrator(self.scheme))
        if not self.modes:
            raise ValueError("a mode sequence needs at least one mode")
        if len(self.steps_per_mode) != len(self.modes):
            raise ValueError("steps_per_mode must give one count per mode")
        if any(n < 1 for n in self.steps_per_mode):
            raise ValueError("every mode needs at least one step")
        if self.dt <= 0:
            raise ValueError("substep dt must be positive")

    @property
    def mode_count(self):
        return len(self.modes)

    @property
    def horizon(self):
        return sum(self.steps_per_mode)

    @property
    def starts(self):
        """First timestep of every mode."""
        return np.concatenate([[0], np.cumsum(self.steps_per_mode)[:-1]]).astype(int)

    def mode_of(self, t):
        if not 0 <= t < self.horizon:
            raise IndexError(f"timestep {t} outside horizon {self.horizon}")
        return int(np.searchsorted(np.cumsum(self.steps_per_mode), t, side='right'))

    def step_duration(self, i, durations):
        return float(durations[i]) / self.steps_per_mode[i]

    def check_durations(self, durations):
        durations = np.asarray(durations, dtype=float).reshape(-1)
        if durations.shape != (self.mode_count,):
            raise ValueError(f"expected {self.mode_count} durations, got {durations.shape}")
        if np.any(durations < 0):
            raise ValueError("mode durations must be nonnegative")
        return durations

    @property
    def has_analytic_derivatives(self):
        return all(
            m.field_jacobian is not None and m.running_cost_derivatives is not None
            and m.exit_cost_derivatives is not None for m in self.modes
        )


def scaled_step(seq, i, x, u, theta_i):
    """Advance mode ``i`` by one step of physical length ``theta_i / N_i``."""
    if theta_i < 0:
        raise ValueError(f"mode duration must be nonnegative, got {theta_i}")
    mode = seq.modes[i]
    return substep_integrate(mode.field, x, u, theta_i / seq.steps_per_mode[i], seq.dt, seq.scheme)


def sto_model(seq):
    """The :class:`ParameterizedModel` with the mode durations as ``theta``."""
    n_x, n_u, n_modes = seq.state_dim, seq.control_dim, seq.mode_count

    def step(x, u, theta, t):
        i = seq.mode_of(t)
        return scaled_step(seq, i, x, u, max(float(theta[i]), 0.0))

    jacobian = None
    if all(m.field_jacobian is not None for m in seq.modes):
        def jacobian(x, u, theta, t):
            i = seq.mode_of(t)
            mode = seq.modes[i]
            _, Fx, Fu, Fdur = substep_jacobians(
                mode.field, mode.field_jacobian, x, u, seq.step_duration(i, np.maximum(theta, 0.0)),
                seq.dt, seq.scheme)
            Ftheta = np.zeros((n_x, n_modes))
            Ftheta[:, i] = Fdur / seq.steps_per_mode[i]
            return DynamicsDerivatives(Fx=Fx, Fu=Fu, Ftheta=Ftheta)

    return ParameterizedModel(n_x, n_u, n_modes, step, jacobian=jacobian, name='sto')


def sto_cost(seq):
    starts = seq.starts
    exits_at = {int(start): i - 1 for i, start in enumerate(starts) if i > 0}
    n_x, n_u, n_modes = seq.state_dim, seq.control_dim, seq.mode_count

    def running(x, u, theta, t):
        i = seq.mode_of(t)
        value = seq.step_duration(i, theta) * seq.modes[i].running_cost(x, u)
        if t in exits_at:
            value += seq.modes[exits_at[t]].exit_cost(x)
        return value

    def terminal(x, theta):
        return seq.modes[-1].exit_cost(x)

    if not seq.has_analytic_derivatives:
        return CostModel(running, terminal)

    def running_derivatives(x, u, theta, t):
        i = seq.mode_of(t)
        n_i = seq.steps_per_mode[i]
        weight = seq.step_duration(i, theta)
        l, lx, lu, lxx, lxu, luu = seq.modes[i].running_cost_derivatives(x, u)
        Ltheta = np.zeros(n_modes)
        Ltheta[i] = l / n_i
        Lxtheta = np.zeros((n_x, n_modes))
        Lxtheta[:, i] = np.asarray(lx) / n_i
        Lutheta = np.zeros((n_u, n_modes))
        Lutheta[:, i] = np.asarray(lu) / n_i
        derivs = CostDerivatives(
            L0=weight * l, Lx=weight * np.asarray(lx, float), Lu=weight * np.asarray(lu, float), Ltheta=Ltheta,
            Lxx=weight * np.asarray(lxx, float), Lxu=weight * np.asarray(lxu, float), Lxtheta=Lxtheta,
            Luu=weight * np.asarray(luu, float), Lutheta=Lutheta, Lthetatheta=np.zeros((n_modes, n_modes)),
        )
        if t in exits_at:
            phi, phix, phixx = seq.modes[exits_at[t]].exit_cost_derivatives(x)
            derivs.L0 += phi
            derivs.Lx = derivs.Lx + phix
            derivs.Lxx = derivs.Lxx + phixx
        return derivs

    def terminal_derivatives(x, theta):
        phi, phix, phixx = seq.modes[-1].exit_cost_derivatives(x)
        return TerminalCostDerivatives(
            phi0=phi, phix=np.asarray(phix, float), phitheta=np.zeros(n_modes),
            phixx=np.asarray(phixx, float), phixtheta=np.zeros((n_x, n_modes)),
            phithetatheta=np.zeros((n_modes, n_modes)),
        )

    return CostModel(running, terminal, running_derivatives, terminal_derivatives)


def build_sto_problem(seq, x1, durations, controls=None, control_bounds=None):
    """Wrap ``seq`` into a :class:`~core.solver.Problem` with ``theta >= 0`` enforced."""
    durations = seq.check_durations(durations)
    if controls is None:
        controls = np.zeros((seq.horizon, seq.control_dim))
    return Problem(
        model=sto_model(seq), cost=sto_cost(seq), x1=x1, controls=controls, params=durations,
        control_bounds=control_bounds, param_bounds=Bounds.nonnegative(seq.mode_count),
    )


@dataclass
class STOResult:
    report: object
    durations: np.ndarray
    initial_durations: np.ndarray


def solve_sto(seq, x1, durations, config=None, scheme=None, controls=None, control_bounds=None):
    """
    Optimize controls and mode durations from ``durations``.

    Without an explicit config the first five iterations update the controls
    only.
    """
    if config is None:
        config = SolverConfig(warm_start_control_only_iters=DEFAULT_WARM_START)
    if scheme is not None:
        config = replace(config, scheme=Scheme(scheme))
    problem = build_sto_problem(seq, x1, durations, controls, control_bounds)
    report = solve(problem, config)
    return STOResult(report=report, durations=report.params.copy(), initial_durations=problem.params.copy())


def simulate_modes(seq, x1, controls, durations):
    """
    Simulate ``controls`` over physical time for fixed ``durations``.

    Returns ``(times, states)`` with one entry per step boundary.
    """
    durations = seq.check_durations(durations)
    controls = np.asarray(controls, dtype=float).reshape(seq.horizon, seq.control_dim)
    states = np.empty((seq.horizon + 1, seq.state_dim))
    times = np.empty(seq.horizon + 1)
    states[0] = x1
    times[0] = 0.0
    t = 0
    for i, mode in enumerate(seq.modes):
        h = seq.step_duration(i, durations)
        for _ in range(seq.steps_per_mode[i]):
            states[t + 1] = substep_integrate(mode.field, states[t], controls[t], h, seq.dt, seq.scheme)
            times[t + 1] = times[t] + h
            t += 1
    return times, states


@dataclass
class SweepRow:
    index: int
    initial_durations: np.ndarray
    final_durations: np.ndarray
    final_cost: float
    iterations: int
    status: str


def run_sweep(seq, x1, samples, config=None, low=1.0, high=10.0, seed=0, threads=1, controls=None,
              control_bounds=None):
    """
    Solve from ``samples`` initial duration vectors drawn uniformly from ``[low, high]``.

    Solves run concurrently on ``threads`` workers; rows come back in sample
    order so the output depends only on ``seed``.
    """
    if samples < 0:
        raise ValueError("samples must be nonnegative")
    if not 0 <= low <= high:
        raise ValueError("need 0 <= low <= high")
    rng = np.random.default_rng(seed)
    starts = rng.uniform(low, high, size=(samples, seq.mode_count))

    def task(index):
        result = solve_sto(seq, x1, starts[index], config, controls=controls, control_bounds=control_bounds)
        report = result.report
        logger.info("sweep sample %d: %s -> %s (%s)", index, np.round(starts[index], 3),
                    np.round(result.durations, 3), report.status.value)
        return SweepRow(index, starts[index].copy(), result.durations, report.final_cost,
                        report.iterations, report.status.value)

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as executor:
        return list(executor.map(task, range(samples)))
