"""
Experiment orchestration for the ``pddp`` management command.

:class:`ExperimentService` turns a validated :class:`~core.config.ExperimentConfig`
into problem instances, runs the named experiment, writes its CSV tables and
summary into the output directory and records the run in the ledger.
"""
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from django.conf import settings
from django.db import DatabaseError

from .backward import linearize_trajectory
from .boxqp import Bounds
from .config import ExperimentConfig
from .dynamics import Trajectory
from .estimation import EstimationPrior, RecedingHorizonConfig, run_receding_horizon
from .exceptions import ConfigError, NotPositiveDefinite
from .models import ExperimentRun
from .reports import (emit_report, epsilon_frame, read_summary, sweep_frame, trajectory_frame, write_csv,
                      write_summary)
from .solver import (Scheme, SolveStatus, descent_diagnostic, epsilon_sweep, regularized_backward_pass,
                     solve)
from .sto import DEFAULT_WARM_START, run_sweep, simulate_modes, solve_sto
from .systems import (CARTPOLE_DT, QUADROTOR_DT, CartpoleParams, QuadrotorParams, get_sto_task,
                      get_system)


logger = logging.getLogger(__name__)

EXIT_CODES = {
    SolveStatus.CONVERGED: 0,
    SolveStatus.LINE_SEARCH_FAILED: 2,
    SolveStatus.MAX_ITERATIONS: 3,
}
DEFAULT_HORIZONS = {'cartpole': 100, 'quadrotor': 100, 'lti': 30}
PARAM_CLASSES = {'cartpole': CartpoleParams, 'quadrotor': QuadrotorParams}
STEP_SIZES = {'cartpole': CARTPOLE_DT, 'quadrotor': QUADROTOR_DT}
# deliberately wrong starting estimates for the estimation runs
MHE_INITIAL_GUESS = {'cartpole': [2.0], 'quadrotor': [1.0, 1.0, 1.0, 1.0]}
DEFAULT_EPSILONS = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
DEFAULT_DURATION = 5.0
DURATION_BIN = 0.5


@dataclass
class ExperimentOutcome:
    kind: str
    system: str
    status: str
    exit_code: int
    scheme: str = ''
    final_cost: float = None
    final_params: list = field(default_factory=list)
    iterations: int = 0
    wall_time: float = 0.0
    output_dir: Path = None
    artifacts: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


class ExperimentService:
    def __init__(self, config: ExperimentConfig, out_dir=None, threads=None, seed=None):
        options = settings.PDDP
        self.config = config
        self.out_dir = Path(out_dir) if out_dir else Path(options['OUTPUT_DIR'])
        self.threads = threads or options['THREADS']
        if seed is not None:
            config.seed = seed
        self.handlers = {
            'solve': self.run_solve,
            'mhe-mpc': self.run_mhe_mpc,
            'sto': self.run_sto,
            'sto-sweep': self.run_sto_sweep,
            'diagnostics': self.run_diagnostics,
        }

    def run(self):
        cfg = self.config
        logger.info("running %s on %s, writing to %s", cfg.experiment, cfg.system or cfg.sto.get('task', '-'),
                    self.out_dir)
        started = time.perf_counter()
        outcome = self.handlers[cfg.experiment]()
        outcome.output_dir = self.out_dir
        if not outcome.wall_time:
            outcome.wall_time = time.perf_counter() - started
        self.record(outcome)
        return outcome

    # -- problem construction ------------------------------------------------

    def _params(self):
        system = self.config.system
        try:
            return PARAM_CLASSES[system](**self.config.system_params)
        except ValueError as exc:
            raise ConfigError(str(exc), field='system_params') from exc

    def build_problem(self, horizon=None, theta0=None, weights=None):
        """The benchmark problem of the configured system."""
        cfg = self.config
        entry = get_system(cfg.system)
        horizon = horizon or cfg.horizon or DEFAULT_HORIZONS[cfg.system]
        theta0 = cfg.theta0 if theta0 is None else theta0
        try:
            if cfg.system == 'lti':
                problem = entry.build_problem(seed=cfg.seed, horizon=horizon, **cfg.system_params)
                if theta0 is not None:
                    problem = replace(problem, params=np.asarray(theta0, dtype=float))
                return problem
            weights = dict(cfg.cost if weights is None else weights)
            extra = {}
            if 'target' in weights:
                extra['target'] = tuple(weights.pop('target'))
            if 'heading' in weights:
                extra['heading'] = weights.pop('heading')
            return entry.build_problem(self._params(), horizon=horizon, theta0=theta0, weights=weights, **extra)
        except ValueError as exc:
            raise ConfigError(str(exc), field='theta0' if theta0 is not None else 'system_params') from exc

    def _labels(self):
        entry = get_system(self.config.system)
        return entry.state_labels, entry.param_labels

    def _sto_task(self):
        cfg = self.config
        options = cfg.sto
        name = options.get('task') or cfg.system or 'cartpole'
        kwargs = {key: options[key] for key in ('steps_per_mode', 'dt', 'exit_weight', 'control_weight',
                                                'time_weight') if key in options}
        if name == cfg.system and cfg.system_params:
            kwargs['params'] = self._params()
        try:
            return name, get_sto_task(name)(**kwargs)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc), field='sto') from exc

    def _sto_solver_config(self):
        solver = self.config.solver
        if 'warm_start_control_only_iters' not in self.config.document.get('solver', {}):
            solver = replace(solver, warm_start_control_only_iters=DEFAULT_WARM_START)
        return solver

    # -- experiments -----------------------------------------------------------

    def run_solve(self):
        cfg = self.config
        problem = self.build_problem()
        report = solve(problem, cfg.solver)
        state_labels, param_labels = self._labels()
        artifacts = emit_report(
            report, self.out_dir, prefix='solve', state_labels=state_labels, param_labels=param_labels,
            summary_extra={'experiment': 'solve', 'system': cfg.system, 'scheme': cfg.solver.scheme.value})
        return ExperimentOutcome(
            kind='solve', system=cfg.system, scheme=cfg.solver.scheme.value, status=report.status.value,
            exit_code=EXIT_CODES[report.status], final_cost=report.final_cost,
            final_params=[float(v) for v in report.params], iterations=report.iterations,
            wall_time=report.wall_time, artifacts=artifacts, summary=report_summary(artifacts),
        )

    def run_mhe_mpc(self):
        cfg = self.config
        if cfg.system not in PARAM_CLASSES:
            raise ConfigError(f"mhe-mpc is not available for system '{cfg.system}'", field='system')
        options = cfg.estimation
        params = self._params()
        entry = get_system(cfg.system)
        model = entry.build_model(params)
        theta0 = np.asarray(cfg.theta0 if cfg.theta0 is not None else MHE_INITIAL_GUESS[cfg.system], dtype=float)
        true_theta = np.asarray(options.get('true_params', params.theta), dtype=float)
        if theta0.size != true_theta.size or true_theta.size != model.param_dim:
            raise ConfigError(f"{cfg.system} has {model.param_dim} parameters", field='theta0')
        try:
            rh_config = RecedingHorizonConfig(
                estimation_horizon=options.get('estimation_horizon', 100),
                mpc_horizon=options.get('mpc_horizon', 100),
                total_steps=options.get('total_steps', 200),
                noise_seed=options.get('noise_seed', cfg.seed),
                noise_scale=options.get('noise_scale', 1.0),
                estimate_initial_state=options.get('estimate_initial_state', False),
                residual_form=options.get('residual_form', 'chain'),
                dt=STEP_SIZES[cfg.system],
            )
        except ValueError as exc:
            raise ConfigError(str(exc), field='estimation') from exc

        # the MPC stage cost must not pull theta anywhere
        task = self.build_problem(horizon=rh_config.mpc_horizon, theta0=theta0,
                                  weights={**cfg.cost, 'param': 0.0})
        prior = EstimationPrior.weak(
            theta0, task.x1, noise_std=options.get('noise_std', 0.01), param_std=options.get('param_std', 10.0),
            state_std=options.get('state_std', 0.01))
        lower = np.full(model.param_dim, options.get('min_param', 1e-4))
        solver_config = replace(cfg.solver, max_iterations=options.get('max_iterations_per_step', 20))
        report = run_receding_horizon(
            model, true_theta, model, prior, task.cost, task.x1, rh_config, solver_config,
            initial_controls=task.controls, theta0=theta0,
            param_bounds=Bounds(lower, np.full(model.param_dim, np.inf)),
        )
        state_labels, param_labels = entry.state_labels, entry.param_labels
        failed = report.failed_steps
        history = report.theta_history
        artifacts = emit_report(
            report, self.out_dir, prefix='mhe', state_labels=state_labels, param_labels=param_labels,
            summary_extra={
                'experiment': 'mhe-mpc', 'system': cfg.system, 'true_params': true_theta.tolist(),
                'initial_params': theta0.tolist(),
                'first_step_within_5pct': report.first_step_within(true_theta, 0.05),
                'status': 'line_search_failed' if failed else 'completed',
            })
        return ExperimentOutcome(
            kind='mhe-mpc', system=cfg.system, scheme=cfg.solver.scheme.value,
            status='line_search_failed' if failed else 'completed', exit_code=2 if failed else 0,
            final_cost=report.steps[-1].cost if report.steps else None,
            final_params=history[-1].tolist() if len(history) else [], iterations=len(report.steps),
            artifacts=artifacts, summary=report_summary(artifacts),
        )

    def _initial_durations(self, seq):
        durations = self.config.sto.get('durations')
        if durations is None:
            return np.full(seq.mode_count, DEFAULT_DURATION)
        if len(durations) != seq.mode_count:
            raise ConfigError(f"expected {seq.mode_count} durations", field='sto.durations')
        return np.asarray(durations, dtype=float)

    def run_sto(self):
        cfg = self.config
        name, task = self._sto_task()
        seq = task.sequence
        durations = self._initial_durations(seq)
        solver_config = self._sto_solver_config()
        try:
            result = solve_sto(seq, task.x1, durations, solver_config, controls=task.initial_controls,
                               control_bounds=task.control_bounds)
        except ValueError as exc:
            raise ConfigError(str(exc), field='sto.durations') from exc
        report = result.report
        labels = [f'duration_{i + 1}' for i in range(seq.mode_count)]
        artifacts = emit_report(
            report, self.out_dir, prefix='sto', param_labels=labels,
            summary_extra={
                'experiment': 'sto', 'task': name, 'scheme': solver_config.scheme.value,
                'initial_durations': result.initial_durations.tolist(),
                'final_durations': result.durations.tolist(),
            })
        times, states = simulate_modes(seq, task.x1, report.trajectory.controls, result.durations)
        timeline = Trajectory(states, report.trajectory.controls, result.durations, report.final_cost)
        artifacts['timeline'] = write_csv(trajectory_frame(timeline, times=times), self.out_dir / 'sto_timeline.csv')
        return ExperimentOutcome(
            kind='sto', system=name, scheme=solver_config.scheme.value, status=report.status.value,
            exit_code=EXIT_CODES[report.status], final_cost=report.final_cost,
            final_params=result.durations.tolist(), iterations=report.iterations, wall_time=report.wall_time,
            artifacts=artifacts, summary=report_summary(artifacts),
        )

    def run_sto_sweep(self):
        cfg = self.config
        options = cfg.sweep
        name, task = self._sto_task()
        seq = task.sequence
        base = self._sto_solver_config()
        schemes = options.get('schemes') or [base.scheme.value]
        summary = {'experiment': 'sto-sweep', 'task': name, 'schemes': {}}
        artifacts = {}
        any_failed = False
        total_iterations = 0
        for scheme in schemes:
            rows = run_sweep(
                seq, task.x1, options.get('samples', 50), config=replace(base, scheme=Scheme(scheme)),
                low=options.get('low', 1.0), high=options.get('high', 10.0), seed=options.get('seed', cfg.seed),
                threads=self.threads, controls=task.initial_controls, control_bounds=task.control_bounds,
            )
            frame = sweep_frame(rows, seq.mode_count)
            artifacts[f'sweep_{scheme}'] = write_csv(frame, self.out_dir / f'sweep_{scheme}.csv')
            summary['schemes'][scheme] = sweep_statistics(frame, seq.mode_count)
            any_failed = any_failed or any(row.status == SolveStatus.LINE_SEARCH_FAILED.value for row in rows)
            total_iterations += sum(row.iterations for row in rows)
        status = 'line_search_failed' if any_failed else 'completed'
        summary['status'] = status
        artifacts['summary'] = write_summary(summary, self.out_dir / 'sweep_summary.json')
        return ExperimentOutcome(
            kind='sto-sweep', system=name, scheme=','.join(schemes), status=status,
            exit_code=2 if any_failed else 0, iterations=total_iterations, artifacts=artifacts, summary=summary,
        )

    def run_diagnostics(self):
        cfg = self.config
        options = cfg.diagnostics
        problem = self.build_problem()
        warmup = options.get('warmup_iterations', 0)
        if warmup:
            nominal = solve(problem, replace(cfg.solver, max_iterations=warmup)).trajectory
        else:
            nominal = problem.initial_rollout()
        full = cfg.solver.full_second_order
        derivatives = linearize_trajectory(nominal, problem.model, problem.cost, full)
        try:
            backward, reg = regularized_backward_pass(
                problem, nominal, cfg.solver.initial_regularization(), problem.backward_options(full), derivatives)
        except NotPositiveDefinite as exc:
            logger.warning("diagnostics: %s", exc)
            summary = {'experiment': 'diagnostics', 'system': cfg.system, 'status': 'backward_failed'}
            artifacts = {'summary': write_summary(summary, self.out_dir / 'diagnostics_summary.json')}
            return ExperimentOutcome(kind='diagnostics', system=cfg.system, status='backward_failed',
                                     exit_code=2, artifacts=artifacts, summary=summary)

        epsilons = options.get('epsilons') or DEFAULT_EPSILONS
        sweep = epsilon_sweep(problem, nominal, backward.schedule, epsilons)
        frame = epsilon_frame(sweep)
        descent = [descent_diagnostic(problem, nominal, backward, eps, derivatives) for eps in epsilons]
        frame['descent_inner'] = [d.inner_product for d in descent]
        frame['descent_predicted'] = [d.predicted for d in descent]
        artifacts = {'epsilon_sweep': write_csv(frame, self.out_dir / 'diagnostics_epsilon.csv')}
        summary = {
            'experiment': 'diagnostics', 'system': cfg.system, 'status': 'completed',
            'nominal_cost': nominal.cost, 'sum_lambda': backward.schedule.total_decrement,
            'psi': backward.schedule.psi, 'mu': reg.mu, 'nu': reg.nu, 'slopes': sweep.slopes,
        }
        artifacts['summary'] = write_summary(summary, self.out_dir / 'diagnostics_summary.json')
        return ExperimentOutcome(
            kind='diagnostics', system=cfg.system, scheme=cfg.solver.scheme.value, status='completed',
            exit_code=0, final_cost=nominal.cost, final_params=[float(v) for v in nominal.params],
            iterations=warmup, artifacts=artifacts, summary=summary,
        )

    # -- ledger ----------------------------------------------------------------

    def record(self, outcome):
        if not settings.PDDP['RECORD_RUNS']:
            return None
        try:
            return ExperimentRun.objects.create(
                kind=outcome.kind, system=outcome.system, scheme=outcome.scheme, status=outcome.status,
                exit_code=outcome.exit_code, final_cost=_finite_or_none(outcome.final_cost),
                final_params=outcome.final_params, iterations=outcome.iterations, wall_time=outcome.wall_time,
                output_dir=str(outcome.output_dir), config=self.config.document,
            )
        except DatabaseError as exc:
            logger.warning("run not recorded: %s", exc)
            return None


def _finite_or_none(value):
    if value is None or not np.isfinite(value):
        return None
    return float(value)


def report_summary(artifacts):
    """Read back the summary written for a run."""
    return read_summary(artifacts['summary'])


def sweep_statistics(frame, mode_count):
    """Mean final cost, status counts and the modal final-duration bin of one sweep table."""
    if frame.empty:
        return {'samples': 0, 'mean_final_cost': None, 'statuses': {}, 'modal_bin': None, 'modal_fraction': 0.0}
    final = frame[[f'theta_final_{i}' for i in range(mode_count)]]
    bins = (final // DURATION_BIN).astype(int)
    counts = bins.value_counts()
    modal = counts.index[0]
    modal = modal if isinstance(modal, tuple) else (modal,)
    return {
        'samples': int(len(frame)),
        'mean_final_cost': float(frame['final_cost'].mean()),
        'statuses': {str(k): int(v) for k, v in frame['status'].value_counts().sort_index().items()},
        'modal_bin': [[b * DURATION_BIN, (b + 1) * DURATION_BIN] for b in map(int, modal)],
        'modal_fraction': float(counts.iloc[0] / len(frame)),
    }


