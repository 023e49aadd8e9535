import math
from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import DivergedRollout, GimbalLock
from core.systems import (CartpoleParams, QuadrotorParams, cartpole_energy, cartpole_field, cartpole_field_jacobian,
                          cartpole_model, get_sto_task, get_system, is_controllable, lti_problem,
                          quadrotor_field, quadrotor_field_jacobian, quadrotor_point_to_point)


def field_fd(field, x, u, step=1e-6):
    A = np.zeros((x.size, x.size))
    B = np.zeros((x.size, u.size))
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = step
        A[:, i] = (field(x + e, u) - field(x - e, u)) / (2 * step)
    for j in range(u.size):
        e = np.zeros(u.size)
        e[j] = step
        B[:, j] = (field(x, u + e) - field(x, u - e)) / (2 * step)
    return A, B


def param_fd(field, params, names, x, u, step=1e-7):
    columns = []
    for name in names:
        value = getattr(params, name)
        plus = replace(params, **{name: value + step})
        minus = replace(params, **{name: value - step})
        columns.append((field(x, u, plus) - field(x, u, minus)) / (2 * step))
    return np.column_stack(columns)


class CartpoleTests(SimpleTestCase):
    def test_energy_is_conserved_without_force(self):
        params = CartpoleParams()
        model = cartpole_model(params, dt=0.01)
        x = np.array([0.0, 1.0, 0.0, 0.0])
        start = cartpole_energy(x, params)
        for _ in range(200):
            x = model.step(x, np.zeros(1), params.theta, 0)
        self.assertAlmostEqual(cartpole_energy(x, params), start, delta=1e-4)

    def test_hanging_rest_is_an_equilibrium(self):
        np.testing.assert_allclose(cartpole_field(np.zeros(4), np.zeros(1)), 0.0, atol=1e-14)

    def test_field_jacobian_matches_finite_differences(self):
        params = CartpoleParams()
        x = np.array([0.3, 2.2, -0.5, 1.4])
        u = np.array([4.0])
        A, B, C = cartpole_field_jacobian(x, u, params)
        A_fd, B_fd = field_fd(lambda xx, uu: cartpole_field(xx, uu, params), x, u)
        np.testing.assert_allclose(A, A_fd, rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(B, B_fd, rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(C, param_fd(cartpole_field, params, ['pole_mass'], x, u), rtol=1e-5, atol=1e-6)

    def test_parameters_must_be_positive(self):
        with self.assertRaises(ValueError):
            CartpoleParams(pole_mass=0.0)


class QuadrotorTests(SimpleTestCase):
    def test_hover_is_an_equilibrium(self):
        params = QuadrotorParams()
        u = np.array([params.hover_thrust, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(quadrotor_field(np.zeros(12), u, params), 0.0, atol=1e-12)

    def test_field_jacobian_matches_finite_differences(self):
        params = QuadrotorParams()
        rng = np.random.default_rng(17)
        x = rng.uniform(-0.5, 0.5, 12)
        u = np.array([5.0, 0.01, -0.02, 0.005])
        A, B, C = quadrotor_field_jacobian(x, u, params)
        A_fd, B_fd = field_fd(lambda xx, uu: quadrotor_field(xx, uu, params), x, u)
        np.testing.assert_allclose(A, A_fd, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(B, B_fd, rtol=1e-5, atol=1e-6)
        C_fd = param_fd(quadrotor_field, params, ['mass', 'Jx', 'Jy', 'Jz'], x, u, step=1e-9)
        np.testing.assert_allclose(C, C_fd, rtol=1e-4, atol=1e-4)

    def test_heading_sets_the_yaw_goal(self):
        params = QuadrotorParams()
        task = quadrotor_point_to_point(params, horizon=5, target=(1.0, 2.0, 3.0), heading=0.5)
        hover = np.array([params.hover_thrust, 0.0, 0.0, 0.0])
        goal = np.zeros(12)
        goal[0:3] = [1.0, 2.0, 3.0]
        goal[5] = 0.5
        self.assertEqual(task.cost.running(goal, hover, params.theta, 0), 0.0)
        goal[5] = 0.0
        self.assertAlmostEqual(task.cost.running(goal, hover, params.theta, 0), 0.5 * 0.25)

    def test_gimbal_lock_is_reported(self):
        x = np.zeros(12)
        x[4] = math.pi / 2
        u = np.array([QuadrotorParams().hover_thrust, 0.0, 0.0, 0.0])
        with self.assertRaises(GimbalLock) as caught:
            quadrotor_field(x, u)
        self.assertIsInstance(caught.exception, DivergedRollout)
        self.assertAlmostEqual(caught.exception.pitch, math.pi / 2)


class LTITests(SimpleTestCase):
    def test_seeded_problems_are_reproducible_and_controllable(self):
        first, second = lti_problem(4, 2, 2, seed=9), lti_problem(4, 2, 2, seed=9)
        np.testing.assert_array_equal(first.A, second.A)
        np.testing.assert_array_equal(first.x1, second.x1)
        self.assertTrue(is_controllable(first.A, first.B))
        self.assertEqual(first.C.shape, (4, 2))

    def test_invalid_dimensions(self):
        with self.assertRaises(ValueError):
            lti_problem(0, 1, 0)
        with self.assertRaises(ValueError):
            lti_problem(2, 1, -1)

    def test_uncontrollable_pair(self):
        self.assertFalse(is_controllable(np.eye(2), np.array([[1.0], [0.0]])))


class RegistryTests(SimpleTestCase):
    def test_lookup(self):
        cartpole = get_system('cartpole')
        self.assertEqual(cartpole.param_labels, ('pole_mass',))
        self.assertEqual(len(get_system('quadrotor').state_labels), 12)
        problem = get_system('quadrotor').build_problem(horizon=10)
        np.testing.assert_array_equal(problem.params, QuadrotorParams().theta)
        self.assertEqual(problem.horizon, 10)

    def test_unknown_names(self):
        with self.assertRaises(KeyError):
            get_system('pendulum')
        with self.assertRaises(KeyError):
            get_sto_task('pendulum')

    def test_sto_tasks_build(self):
        for name in ('cartpole', 'quadrotor', 'double_integrator'):
            with self.subTest(name=name):
                task = get_sto_task(name)()
                self.assertEqual(task.x1.size, task.sequence.state_dim)
