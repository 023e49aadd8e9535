from dataclasses import replace
from types import SimpleNamespace

import numpy as np
from django.test import SimpleTestCase, tag

from core.backward import RegularizationState, backward_pass
from core.boxqp import Bounds
from core.dynamics import rollout
from core.exceptions import ShapeError
from core.solver import (Phase, Problem, Scheme, SolverConfig, SolveStatus, _PhaseTracker,
                         cost_gradient_oracle, descent_diagnostic, epsilon_sweep, expected_reduction, forward_pass,
                         parameter_gradient, solve)
from core.systems import cartpole_swingup, lti_problem, quadrotor_point_to_point

from .oracles import lti_kkt_solution, plain_ddp_path
from .problems import fixed_mass_cartpole, quartic_lti

EXACT = SolverConfig(scheme=Scheme.SIMULTANEOUS, mu_init=0.0, nu_init=0.0, max_iterations=20)


def central_difference_gradient(problem, controls, step=1e-6):
    grad = np.zeros_like(controls)
    for t in range(controls.shape[0]):
        for j in range(controls.shape[1]):
            plus, minus = controls.copy(), controls.copy()
            plus[t, j] += step
            minus[t, j] -= step
            grad[t, j] = (rollout(problem.model, problem.cost, problem.x1, plus, problem.params).cost
                          - rollout(problem.model, problem.cost, problem.x1, minus, problem.params).cost) / (2 * step)
    return grad


class SolverConfigTests(SimpleTestCase):
    def test_epsilon_schedule(self):
        config = SolverConfig(rho=0.5, epsilon_min=0.1)
        self.assertEqual(config.epsilons(), [1.0, 0.5, 0.25, 0.125])

    def test_invalid_settings(self):
        for kwargs in ({'rho': 1.0}, {'epsilon_min': 0.0}, {'kappa': 0.0}, {'tolerance': -1.0},
                       {'max_iterations': 0}, {'mu_init': -1.0}):
            with self.subTest(**kwargs), self.assertRaises(ValueError):
                SolverConfig(**kwargs)

    def test_scheme_accepts_strings(self):
        self.assertEqual(SolverConfig(scheme='alternating').scheme, Scheme.ALTERNATING)

    def test_expected_reduction(self):
        self.assertAlmostEqual(expected_reduction([1.0, 2.0], 1.0, 1.0), -2.0)
        self.assertAlmostEqual(expected_reduction([1.0], 0.0, 0.5), -0.375)
        self.assertAlmostEqual(expected_reduction([2.0], 1.0, 1.0), -1.5)
        self.assertEqual(expected_reduction([2.0], 1.0, 0.0), 0.0)


class ProblemTests(SimpleTestCase):
    def test_validates_dimensions(self):
        lti = lti_problem(3, 2, 1, seed=0)
        with self.assertRaises(ShapeError):
            Problem(lti.model, lti.cost, np.zeros(3), np.zeros((5, 3)), np.zeros(1))
        with self.assertRaises(ShapeError):
            Problem(lti.model, lti.cost, np.zeros(3), np.zeros((5, 2)), np.zeros(1), frozen=np.zeros(4))
        with self.assertRaises(ValueError):
            Problem(lti.model, lti.cost, np.zeros(3), np.zeros((5, 2)), np.array([-1.0]),
                    param_bounds=Bounds.nonnegative(1))

    def test_initial_rollout_clips_controls(self):
        lti = lti_problem(3, 2, 0, seed=0, horizon=5)
        problem = Problem(lti.model, lti.cost, lti.x1, 5.0 * np.ones((5, 2)), np.zeros(0),
                          control_bounds=Bounds.symmetric(1.0, size=2))
        np.testing.assert_array_equal(problem.initial_rollout().controls, np.ones((5, 2)))


class QuadraticExactnessTests(SimpleTestCase):
    def test_one_newton_step_solves_linear_quadratic_problem(self):
        lti = lti_problem(4, 2, 2, seed=0, horizon=30)
        report = solve(lti.problem(), EXACT)
        self.assertEqual(report.status, SolveStatus.CONVERGED)
        self.assertEqual(report.accepted_iterations, 1)
        self.assertEqual(report.records[0].epsilon, 1.0)
        final = report.records[-1]
        self.assertLess(final.sum_lambda + final.psi, 1e-8)
        controls, theta = lti_kkt_solution(lti)
        np.testing.assert_allclose(report.trajectory.controls, controls, atol=1e-6)
        np.testing.assert_allclose(report.params, theta, atol=1e-6)

    def test_without_parameters(self):
        lti = lti_problem(4, 2, 0, seed=1, horizon=30)
        report = solve(lti.problem(), EXACT)
        self.assertTrue(report.converged)
        self.assertEqual(report.accepted_iterations, 1)
        controls, _ = lti_kkt_solution(lti)
        np.testing.assert_allclose(report.trajectory.controls, controls, atol=1e-6)

    def test_alternating_and_controls_first_reach_the_same_optimum(self):
        lti = lti_problem(3, 2, 2, seed=2, horizon=20)
        controls, theta = lti_kkt_solution(lti)
        for scheme in (Scheme.ALTERNATING, Scheme.CONTROLS_FIRST):
            with self.subTest(scheme=scheme):
                report = solve(lti.problem(), replace(EXACT, scheme=scheme, max_iterations=500, tolerance=1e-10))
                self.assertTrue(report.converged)
                np.testing.assert_allclose(report.params, theta, atol=1e-4)
                np.testing.assert_allclose(report.trajectory.controls, controls, atol=1e-4)

    def test_alternating_scheme_alternates(self):
        lti = lti_problem(3, 2, 2, seed=3, horizon=10)
        report = solve(lti.problem(), replace(EXACT, scheme=Scheme.ALTERNATING, max_iterations=4))
        phases = [r.phase for r in report.records if r.accepted]
        self.assertEqual(phases[:2], [Phase.CONTROLS.value, Phase.PARAMETERS.value])

    def test_warm_start_moves_controls_only(self):
        lti = lti_problem(3, 2, 2, seed=4, horizon=10)
        problem = lti.problem(np.ones((10, 2)), np.array([0.5, -0.5]))
        report = solve(problem, replace(EXACT, warm_start_control_only_iters=1, max_iterations=3))
        first = report.records[0]
        self.assertEqual(first.phase, Phase.WARM_START.value)
        np.testing.assert_array_equal(first.params, [0.5, -0.5])

    def test_optimal_parameters_leave_only_a_control_step(self):
        lti = lti_problem(3, 2, 2, seed=5, horizon=10)
        _, theta = lti_kkt_solution(lti)
        report = solve(lti.problem(theta=theta), replace(EXACT, scheme=Scheme.ALTERNATING))
        self.assertTrue(report.converged)
        self.assertEqual(report.records[0].phase, Phase.CONTROLS.value)


class CartpoleSolveTests(SimpleTestCase):
    def test_accepted_costs_decrease_strictly(self):
        problem = cartpole_swingup(horizon=60, theta0=[0.8])
        report = solve(problem, SolverConfig(max_iterations=40))
        costs = [problem.initial_rollout().cost] + report.accepted_costs
        self.assertGreater(len(costs), 3)
        self.assertTrue(all(b < a for a, b in zip(costs, costs[1:])))
        self.assertEqual(report.iterations, len(report.records))
        self.assertIn(report.status, (SolveStatus.CONVERGED, SolveStatus.MAX_ITERATIONS))

    def test_iteration_limit_status(self):
        report = solve(cartpole_swingup(horizon=30), SolverConfig(max_iterations=1))
        self.assertEqual(report.status, SolveStatus.MAX_ITERATIONS)
        self.assertEqual(report.iterations, 1)

    def test_parameter_bounds_are_respected(self):
        problem = cartpole_swingup(horizon=40, theta0=[0.3])
        problem = replace(problem, param_bounds=Bounds([0.25], [0.35]))
        report = solve(problem, SolverConfig(max_iterations=15))
        for record in report.records:
            self.assertTrue(0.25 <= record.params[0] <= 0.35)


class GradientOracleTests(SimpleTestCase):
    def test_matches_central_differences(self):
        rng = np.random.default_rng(21)
        for _ in range(3):
            problem = cartpole_swingup(horizon=50, theta0=[rng.uniform(0.3, 1.0)])
            problem = replace(problem, controls=rng.normal(0.0, 2.0, (50, 1)))
            traj = problem.initial_rollout()
            grad = cost_gradient_oracle(traj, problem.model, problem.cost)
            numeric = central_difference_gradient(problem, traj.controls)
            scale = np.max(np.abs(numeric))
            np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-6 * scale)

    def test_parameter_gradient_matches_central_differences(self):
        lti = lti_problem(3, 2, 2, seed=8, horizon=10)
        rng = np.random.default_rng(0)
        controls, theta = rng.standard_normal((10, 2)), rng.standard_normal(2)
        traj = rollout(lti.model, lti.cost, lti.x1, controls, theta)
        grad = parameter_gradient(traj, lti.model, lti.cost)
        for i in range(2):
            e = np.zeros(2)
            e[i] = 1e-6
            numeric = (rollout(lti.model, lti.cost, lti.x1, controls, theta + e).cost
                       - rollout(lti.model, lti.cost, lti.x1, controls, theta - e).cost) / 2e-6
            self.assertAlmostEqual(grad[i], numeric, delta=1e-5 * max(1.0, abs(numeric)))


class DescentTests(SimpleTestCase):
    def test_small_steps_descend_along_the_gradient(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            problem = fixed_mass_cartpole(horizon=50, controls=rng.normal(0.0, 2.0, (50, 1)))
            nominal = problem.initial_rollout()
            backward = backward_pass(nominal, problem.model, problem.cost, RegularizationState())
            diagnostic = descent_diagnostic(problem, nominal, backward, 1e-4)
            self.assertLess(diagnostic.inner_product, 0.0)
            self.assertAlmostEqual(diagnostic.inner_product / diagnostic.predicted, 1.0, delta=1e-2)


class StepSizeOrderTests(SimpleTestCase):
    def test_cost_change_matches_prediction_to_third_order(self):
        problem = quartic_lti(seed=3)
        nominal = problem.initial_rollout()
        schedule = backward_pass(nominal, problem.model, problem.cost, RegularizationState()).schedule
        sweep = epsilon_sweep(problem, nominal, schedule, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
        self.assertGreaterEqual(sweep.slopes['gap'], 2.5)

    def test_deviations_scale_linearly_with_epsilon(self):
        problem = cartpole_swingup(horizon=40, theta0=[0.7])
        nominal = problem.initial_rollout()
        schedule = backward_pass(nominal, problem.model, problem.cost, RegularizationState()).schedule
        epsilons = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2]
        sweep = epsilon_sweep(problem, nominal, schedule, epsilons)
        for name in ('max_du', 'max_dx', 'dtheta'):
            self.assertAlmostEqual(sweep.slopes[name], 1.0, delta=0.1, msg=name)
        self.assertEqual(len(sweep.rows), len(epsilons))

    def test_forward_pass_at_zero_step_reproduces_nominal(self):
        problem = cartpole_swingup(horizon=20)
        nominal = problem.initial_rollout()
        schedule = backward_pass(nominal, problem.model, problem.cost, RegularizationState()).schedule
        candidate = forward_pass(problem, nominal, schedule, 0.0)
        np.testing.assert_allclose(candidate.states, nominal.states, atol=1e-12)
        self.assertAlmostEqual(candidate.cost, nominal.cost, places=10)
        with self.assertRaises(ValueError):
            forward_pass(problem, nominal, schedule, 0.5, update_controls=False, update_params=False)


@tag('slow')
class RandomInitializationTests(SimpleTestCase):
    def test_cartpole_and_quadrotor_terminate_with_monotone_costs(self):
        rng = np.random.default_rng(2024)
        quadrotor = quadrotor_point_to_point(horizon=100)
        for _ in range(5):
            problems = [
                replace(cartpole_swingup(horizon=100, theta0=[rng.uniform(0.2, 1.0)]),
                        controls=rng.normal(0.0, 1.0, (100, 1))),
                replace(quadrotor, params=rng.uniform(0.9, 1.1) * quadrotor.params),
            ]
            for problem in problems:
                report = solve(problem, SolverConfig(max_iterations=200))
                self.assertIn(report.status, (SolveStatus.CONVERGED, SolveStatus.MAX_ITERATIONS))
                costs = [problem.initial_rollout().cost] + report.accepted_costs
                self.assertTrue(all(b < a for a, b in zip(costs, costs[1:])))
                self.assertLess(report.final_cost, costs[0])


class ControlsFirstSequenceTests(SimpleTestCase):
    def tracker(self):
        lti = lti_problem(3, 2, 2, seed=3, horizon=10)
        return _PhaseTracker(lti.problem(), SolverConfig(scheme=Scheme.CONTROLS_FIRST, inner_tolerance=1e-4))

    def run_tracker(self, tracker, schedules):
        phases = []
        for schedule in schedules:
            phase = tracker.choose(schedule)
            tracker.accepted(phase)
            phases.append(phase)
        return phases

    def test_one_parameter_step_then_back_to_controls(self):
        busy = SimpleNamespace(total_decrement=1.0, psi=1.0)
        settled = SimpleNamespace(total_decrement=1e-5, psi=1.0)
        phases = self.run_tracker(self.tracker(), [busy, settled, settled, settled, settled])
        self.assertEqual(phases, [Phase.CONTROLS, Phase.PARAMETERS, Phase.CONTROLS, Phase.PARAMETERS,
                                  Phase.CONTROLS])

    def test_exhausted_controls_hand_over_to_parameters(self):
        exhausted = SimpleNamespace(total_decrement=0.0, psi=1.0)
        phases = self.run_tracker(self.tracker(), [exhausted, exhausted])
        self.assertEqual(phases, [Phase.PARAMETERS, Phase.PARAMETERS])

    def test_solve_takes_single_parameter_steps(self):
        lti = lti_problem(3, 2, 2, seed=2, horizon=20)
        config = replace(EXACT, scheme=Scheme.CONTROLS_FIRST, max_iterations=100, tolerance=1e-10)
        report = solve(lti.problem(), config)
        accepted = [record for record in report.records if record.accepted]
        self.assertIn(Phase.PARAMETERS.value, [record.phase for record in accepted])
        for previous, current in zip(accepted, accepted[1:]):
            if previous.phase == current.phase == Phase.PARAMETERS.value:
                self.assertLessEqual(current.sum_lambda, 0.5 * config.tolerance)


class PlainILQRPathTests(SimpleTestCase):
    def test_solve_without_parameters_follows_plain_ilqr(self):
        rng = np.random.default_rng(31)
        problem = fixed_mass_cartpole(horizon=50, controls=rng.normal(0.0, 1.0, (50, 1)))
        report = solve(problem, SolverConfig(max_iterations=50))
        reference = plain_ddp_path(problem.model, problem.cost, problem.x1, problem.controls, 50)
        self.assertNotIn('rejected', [kind for kind, _, _ in reference])
        self.assertEqual(len(report.records), len(reference))
        for record, (kind, cost, epsilon) in zip(report.records, reference):
            with self.subTest(iteration=record.iteration):
                self.assertEqual(record.mu, 0.0)
                self.assertEqual(record.accepted, kind == 'accepted')
                self.assertEqual(record.phase, 'converged' if kind == 'converged' else Phase.CONTROLS.value)
                self.assertEqual(record.epsilon, epsilon)
                self.assertAlmostEqual(record.cost, cost, delta=1e-8 * max(1.0, abs(cost)))
        self.assertEqual(report.params.size, 0)


@tag('slow')
class DescentAlongSolveTests(SimpleTestCase):
    def test_every_accepted_iteration_descends(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            problem = fixed_mass_cartpole(horizon=50, controls=rng.normal(0.0, 2.0, (50, 1)))
            seen = {}

            def keep(iteration, nominal, backward):
                seen[iteration] = (nominal, backward)

            report = solve(problem, SolverConfig(max_iterations=50), callback=keep)
            accepted = [record.iteration for record in report.records if record.accepted]
            self.assertTrue(accepted)
            for iteration in accepted:
                nominal, backward = seen[iteration]
                diagnostic = descent_diagnostic(problem, nominal, backward, 1e-4)
                self.assertLess(diagnostic.inner_product, 0.0, msg=f"iteration {iteration}")


@tag('slow')
class ConvergenceRateTests(SimpleTestCase):
    def test_random_initializations_reach_the_tolerance(self):
        rng = np.random.default_rng(7)
        problems = [
            replace(cartpole_swingup(horizon=100, theta0=[rng.uniform(0.2, 1.0)]),
                    controls=rng.normal(0.0, 1.0, (100, 1)))
            for _ in range(16)
        ]
        quadrotor = quadrotor_point_to_point(horizon=100)
        problems += [replace(quadrotor, params=rng.uniform(0.9, 1.1) * quadrotor.params) for _ in range(4)]
        converged = 0
        for problem in problems:
            report = solve(problem, SolverConfig(max_iterations=500))
            costs = [problem.initial_rollout().cost] + report.accepted_costs
            self.assertTrue(all(b < a for a, b in zip(costs, costs[1:])))
            if report.converged:
                self.assertLess(report.final_decrement, 1e-6)
                converged += 1
        self.assertGreaterEqual(converged, 0.95 * len(problems))
