"""
CSV tables and JSON summaries written by the experiment command.

Every table has a header row, even when empty. Floats are written with
Python's shortest round-trip repr and read back with pandas' round-trip
parser, so numeric fields survive emit/parse bit for bit.
"""
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import ReportIOError
from .solver import IterationRecord, SolveReport

logger = logging.getLogger(__name__)

ITERATION_COLUMNS = ['iteration', 'accepted', 'cost', 'epsilon', 'mu', 'nu', 'sum_lambda', 'psi', 'phase',
                     'wall_time']
SWEEP_COLUMNS = ['index', 'final_cost', 'iterations', 'status']
EPSILON_COLUMNS = ['epsilon', 'measured', 'predicted', 'gap', 'max_du', 'max_dx', 'dtheta']


def _labels(prefix, labels, count):
    if labels and len(labels) == count:
        return [f'{prefix}{label}' for label in labels]
    return [f'{prefix}{i}' for i in range(count)]


def iterations_frame(report, param_labels=None):
    n_theta = report.params.size
    theta_columns = _labels('theta_', param_labels, n_theta)
    rows = []
    for record in report.records:
        row = {
            'iteration': record.iteration, 'accepted': record.accepted, 'cost': record.cost,
            'epsilon': np.nan if record.epsilon is None else record.epsilon, 'mu': record.mu, 'nu': record.nu,
            'sum_lambda': record.sum_lambda, 'psi': record.psi, 'phase': record.phase, 'wall_time': record.wall_time,
        }
        row.update(zip(theta_columns, record.params))
        rows.append(row)
    return pd.DataFrame(rows, columns=ITERATION_COLUMNS + theta_columns)


def trajectory_frame(trajectory, state_labels=None, times=None):
    n_x = trajectory.states.shape[1]
    n_u = trajectory.controls.shape[1]
    frame = pd.DataFrame(trajectory.states, columns=_labels('x_', state_labels, n_x))
    frame.insert(0, 'time' if times is not None else 'step', times if times is not None else np.arange(len(frame)))
    controls = np.vstack([trajectory.controls, np.full((1, n_u), np.nan)])
    for j in range(n_u):
        frame[f'u_{j}'] = controls[:, j]
    return frame


def estimation_frame(report, state_labels=None, param_labels=None):
    steps = report.steps
    n_x = steps[0].state.size if steps else len(state_labels or ())
    n_theta = steps[0].theta.size if steps else len(param_labels or ())
    n_u = steps[0].control.size if steps else 0
    state_columns = _labels('x_', state_labels, n_x)
    theta_columns = _labels('theta_', param_labels, n_theta)
    control_columns = [f'u_{j}' for j in range(n_u)]
    rows = []
    for s in steps:
        row = {'step': s.step, 'time': s.time}
        row.update(zip(state_columns, s.state))
        row.update(zip(theta_columns, s.theta))
        row.update(zip(control_columns, s.control))
        row.update({'cost': s.cost, 'status': s.status, 'iterations': s.iterations})
        rows.append(row)
    columns = ['step', 'time'] + state_columns + theta_columns + control_columns + ['cost', 'status', 'iterations']
    return pd.DataFrame(rows, columns=columns)


def sweep_frame(rows, mode_count):
    initial = [f'theta0_{i}' for i in range(mode_count)]
    final = [f'theta_final_{i}' for i in range(mode_count)]
    records = []
    for row in rows:
        record = {'index': row.index, 'final_cost': row.final_cost, 'iterations': row.iterations,
                  'status': row.status}
        record.update(zip(initial, row.initial_durations))
        record.update(zip(final, row.final_durations))
        records.append(record)
    return pd.DataFrame(records, columns=['index'] + initial + final + SWEEP_COLUMNS[1:])


def epsilon_frame(sweep):
    return pd.DataFrame([vars(row) for row in sweep.rows], columns=EPSILON_COLUMNS)


def solve_summary(report, **extra):
    summary = {
        'status': report.status.value,
        'final_cost': report.final_cost,
        'final_params': [float(v) for v in report.params],
        'iterations': report.iterations,
        'accepted_iterations': report.accepted_iterations,
        'final_decrement': report.final_decrement,
        'wall_time': report.wall_time,
    }
    summary.update(extra)
    return summary


def write_csv(frame, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as exc:
        raise ReportIOError(path, exc) from exc
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def write_summary(summary, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w') as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write('\n')
    except OSError as exc:
        raise ReportIOError(path, exc) from exc
    logger.info("wrote %s", path)
    return path


def read_csv(path):
    try:
        return pd.read_csv(path, float_precision='round_trip', keep_default_na=True)
    except OSError as exc:
        raise ReportIOError(path, exc) from exc


def read_summary(path):
    try:
        with Path(path).open() as handle:
            return json.load(handle)
    except OSError as exc:
        raise ReportIOError(path, exc) from exc


def parse_iterations(path):
    """Rebuild the :class:`IterationRecord` list from an iterations CSV."""
    frame = read_csv(path)
    theta_columns = [c for c in frame.columns if c.startswith('theta_')]
    records = []
    for row in frame.itertuples(index=False):
        values = row._asdict()
        epsilon = values['epsilon']
        records.append(IterationRecord(
            iteration=int(values['iteration']), accepted=bool(values['accepted']), cost=float(values['cost']),
            epsilon=None if pd.isna(epsilon) else float(epsilon), mu=float(values['mu']), nu=float(values['nu']),
            sum_lambda=float(values['sum_lambda']), psi=float(values['psi']), phase=str(values['phase']),
            wall_time=float(values['wall_time']),
            params=np.array([values[c] for c in theta_columns], dtype=float),
        ))
    return records


def emit_report(report, out_dir, prefix='run', state_labels=None, param_labels=None, summary_extra=None):
    """
    Write the tables and the summary for a solve or estimation report.

    Returns a mapping from artifact name to path.
    """
    out_dir = Path(out_dir)
    paths = {}
    if isinstance(report, SolveReport):
        paths['iterations'] = write_csv(iterations_frame(report, param_labels), out_dir / f'{prefix}_iterations.csv')
        paths['trajectory'] = write_csv(trajectory_frame(report.trajectory, state_labels),
                                        out_dir / f'{prefix}_trajectory.csv')
        summary = solve_summary(report, **(summary_extra or {}))
    else:
        paths['estimation'] = write_csv(estimation_frame(report, state_labels, param_labels),
                                        out_dir / f'{prefix}_estimation.csv')
        history = report.theta_history
        summary = {
            'steps': len(report.steps),
            'final_params': [float(v) for v in history[-1]] if len(history) else [],
            'failed_steps': report.failed_steps,
            **(summary_extra or {}),
        }
    paths['summary'] = write_summary(summary, out_dir / f'{prefix}_summary.json')
    return paths
