import numpy as np
from django.test import SimpleTestCase

from core.dynamics import (
    Integrator, ParameterizedModel, check_dimensions, fd_cost_derivatives, fd_dynamics_derivatives,
    fd_terminal_cost_derivatives, rollout, substep_count, substep_integrate, substep_jacobians,
    trajectory_cost,
)
from core.exceptions import DerivativeProbeFailed, DivergedRollout, ShapeError
from core.systems import (CartpoleParams, cartpole_field, cartpole_field_jacobian, cartpole_model,
                          lti_problem, tracking_cost)


class RolloutTests(SimpleTestCase):
    def setUp(self):
        self.lti = lti_problem(3, 2, 2, seed=1, horizon=10)
        self.rng = np.random.default_rng(0)

    def test_rollout_matches_trajectory_cost(self):
        controls = self.rng.standard_normal((10, 2))
        theta = self.rng.standard_normal(2)
        traj = rollout(self.lti.model, self.lti.cost, self.lti.x1, controls, theta)
        self.assertEqual(traj.states.shape, (11, 3))
        self.assertAlmostEqual(traj.cost, trajectory_cost(self.lti.cost, traj.states, controls, theta), places=12)

    def test_rollout_is_deterministic(self):
        controls = self.rng.standard_normal((10, 2))
        first = rollout(self.lti.model, self.lti.cost, self.lti.x1, controls, np.zeros(2))
        second = rollout(self.lti.model, self.lti.cost, self.lti.x1, controls, np.zeros(2))
        np.testing.assert_array_equal(first.states, second.states)
        self.assertEqual(first.cost, second.cost)

    def test_empty_horizon_is_terminal_cost_only(self):
        traj = rollout(self.lti.model, self.lti.cost, self.lti.x1, np.zeros((0, 2)), np.zeros(2))
        self.assertEqual(traj.states.shape, (1, 3))
        self.assertAlmostEqual(traj.cost, self.lti.cost.terminal(self.lti.x1, np.zeros(2)))

    def test_wrong_shapes_raise(self):
        with self.assertRaises(ShapeError):
            check_dimensions(self.lti.model, np.zeros(4), np.zeros((10, 2)), np.zeros(2))
        with self.assertRaises(ShapeError):
            check_dimensions(self.lti.model, np.zeros(3), np.zeros((10, 3)), np.zeros(2))
        with self.assertRaises(ShapeError):
            check_dimensions(self.lti.model, np.zeros(3), np.zeros((10, 2)), np.zeros(1))

    def test_blow_up_raises_diverged_rollout(self):
        model = ParameterizedModel(1, 1, 0, lambda x, u, theta, t: x * 1e200)
        cost = tracking_cost(1.0, 1.0, np.zeros(1))
        with self.assertRaises(DivergedRollout) as caught:
            rollout(model, cost, np.ones(1), np.zeros((5, 1)), np.zeros(0))
        self.assertEqual(caught.exception.timestep, 2)


class FiniteDifferenceTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_linear_model_jacobians_are_recovered(self):
        lti = lti_problem(4, 2, 2, seed=2)
        x, u, theta = self.rng.standard_normal(4), self.rng.standard_normal(2), self.rng.standard_normal(2)
        derivs = fd_dynamics_derivatives(lti.model, x, u, theta)
        np.testing.assert_allclose(derivs.Fx, lti.A, atol=1e-7)
        np.testing.assert_allclose(derivs.Fu, lti.B, atol=1e-7)
        np.testing.assert_allclose(derivs.Ftheta, lti.C, atol=1e-7)

    def test_second_order_tensors_vanish_for_linear_model(self):
        lti = lti_problem(2, 1, 1, seed=2)
        derivs = fd_dynamics_derivatives(lti.model, np.ones(2), np.ones(1), np.ones(1), second_order=True)
        self.assertTrue(derivs.has_second_order)
        np.testing.assert_allclose(derivs.Fxx, 0.0, atol=1e-4)
        np.testing.assert_allclose(derivs.Futheta, 0.0, atol=1e-4)

    def test_cost_derivatives_match_analytic(self):
        cost = tracking_cost([1.0, 2.0, 0.5], [0.3, 0.1], np.array([1.0, -1.0, 0.5]), param_dim=2,
                             param_weight=[2.0, 3.0], param_ref=np.array([0.5, 0.5]))
        x, u, theta = self.rng.standard_normal(3), self.rng.standard_normal(2), self.rng.standard_normal(2)
        analytic = cost.running_derivatives(x, u, theta, 0)
        numeric = fd_cost_derivatives(cost, x, u, theta, 0)
        np.testing.assert_allclose(numeric.Lx, analytic.Lx, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(numeric.Lu, analytic.Lu, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(numeric.Lxx, analytic.Lxx, rtol=1e-4, atol=1e-6)
        np.testing.assert_allclose(numeric.Luu, analytic.Luu, rtol=1e-4, atol=1e-6)

        analytic = cost.terminal_derivatives(x, theta)
        numeric = fd_terminal_cost_derivatives(cost, x, theta)
        np.testing.assert_allclose(numeric.phix, analytic.phix, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(numeric.phitheta, analytic.phitheta, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(numeric.phithetatheta, analytic.phithetatheta, rtol=1e-4, atol=1e-6)

    def test_non_finite_evaluation_is_reported(self):
        model = ParameterizedModel(1, 1, 0, lambda x, u, theta, t: np.sqrt(x - 1.0))
        with self.assertRaises(DerivativeProbeFailed):
            model.derivatives(np.ones(1), np.zeros(1), np.zeros(0))


class SubstepTests(SimpleTestCase):
    def test_substep_count(self):
        self.assertEqual(substep_count(0.0, 0.01), 0)
        self.assertEqual(substep_count(0.02, 0.01), 2)
        self.assertEqual(substep_count(0.021, 0.01), 3)
        self.assertEqual(substep_count(0.001, 0.01), 1)
        with self.assertRaises(ValueError):
            substep_count(-1.0, 0.01)

    def test_zero_duration_is_identity(self):
        x = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_array_equal(substep_integrate(cartpole_field, x, np.zeros(1), 0.0, 0.01), x)

    def test_stage_jacobians_match_finite_differences(self):
        params = CartpoleParams()
        field = lambda x, u: cartpole_field(x, u, params)
        jac = lambda x, u: cartpole_field_jacobian(x, u, params)[:2]
        x = np.array([0.1, 2.5, -0.3, 0.7])
        u = np.array([1.5])
        duration = 0.037
        for scheme in (Integrator.EULER, Integrator.RK4):
            with self.subTest(scheme=scheme):
                x_next, Fx, Fu, Fd = substep_jacobians(field, jac, x, u, duration, 0.01, scheme)
                np.testing.assert_allclose(x_next, substep_integrate(field, x, u, duration, 0.01, scheme))
                h = 1e-6
                for i in range(4):
                    e = np.zeros(4)
                    e[i] = h
                    column = (substep_integrate(field, x + e, u, duration, 0.01, scheme)
                              - substep_integrate(field, x - e, u, duration, 0.01, scheme)) / (2 * h)
                    np.testing.assert_allclose(Fx[:, i], column, rtol=1e-6, atol=1e-8)
                column = (substep_integrate(field, x, u + h, duration, 0.01, scheme)
                          - substep_integrate(field, x, u - h, duration, 0.01, scheme)) / (2 * h)
                np.testing.assert_allclose(Fu[:, 0], column, rtol=1e-6, atol=1e-8)
                # the substep count stays at 4 for durations in (0.03, 0.04]
                column = (substep_integrate(field, x, u, duration + h, 0.01, scheme)
                          - substep_integrate(field, x, u, duration - h, 0.01, scheme)) / (2 * h)
                np.testing.assert_allclose(Fd, column, rtol=1e-6, atol=1e-8)

    def test_discretized_model_jacobian_matches_finite_differences(self):
        model = cartpole_model()
        x = np.array([0.2, 1.0, 0.5, -0.4])
        u, theta = np.array([3.0]), np.array([0.7])
        analytic = model.derivatives(x, u, theta)
        numeric = fd_dynamics_derivatives(model, x, u, theta)
        np.testing.assert_allclose(analytic.Fx, numeric.Fx, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(analytic.Fu, numeric.Fu, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(analytic.Ftheta, numeric.Ftheta, rtol=1e-5, atol=1e-8)
