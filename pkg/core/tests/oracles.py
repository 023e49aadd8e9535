"""
Independent reference computations the library is checked against.

Nothing here imports the backward pass or the solver.
"""
import itertools
import math

import numpy as np

from core.dynamics import rollout
from core.exceptions import DivergedRollout


def lti_kkt_solution(lti, theta=None):
    """
    Minimize the LTI problem directly over the stacked ``(U, theta)``.

    The states are eliminated (``x_t`` is affine in the decision vector) and
    the resulting strictly convex quadratic is solved in one linear solve.
    With ``theta`` given only the controls are free.
    """
    A, B, C = lti.A, lti.B, lti.C
    n_x, n_u = B.shape
    n_theta = C.shape[1]
    T = lti.horizon
    free_theta = theta is None
    n_z = T * n_u + (n_theta if free_theta else 0)

    S = np.zeros((n_x, n_z))
    s = np.array(lti.x1, dtype=float)
    H = np.zeros((n_z, n_z))
    g = np.zeros(n_z)
    for t in range(T):
        H += S.T @ lti.Q @ S
        g += S.T @ lti.Q @ s
        cols = slice(t * n_u, (t + 1) * n_u)
        H[cols, cols] += lti.R
        S = A @ S
        S[:, cols] += B
        if free_theta:
            S[:, T * n_u:] += C
            s = A @ s
        else:
            s = A @ s + C @ theta
    H += S.T @ lti.Qf @ S
    g += S.T @ lti.Qf @ s
    if free_theta:
        H[T * n_u:, T * n_u:] += lti.W
        g[T * n_u:] -= lti.W @ lti.theta_ref

    z = -np.linalg.solve(H, g)
    controls = z[:T * n_u].reshape(T, n_u)
    params = z[T * n_u:] if free_theta else np.asarray(theta, dtype=float)
    return controls, params


def lti_value_of_theta(lti, theta):
    """``min_U J(U, theta)``."""
    controls, _ = lti_kkt_solution(lti, theta)
    return rollout(lti.model, lti.cost, lti.x1, controls, theta).cost


def fd_gradient_and_newton_step(func, theta, step=1e-4):
    """Central-difference gradient, Hessian and Newton step of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    grad = np.zeros(n)
    hess = np.zeros((n, n))
    f0 = func(theta)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step
        grad[i] = (func(theta + ei) - func(theta - ei)) / (2 * step)
        hess[i, i] = (func(theta + ei) - 2 * f0 + func(theta - ei)) / step ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = step
            hess[i, j] = hess[j, i] = (
                func(theta + ei + ej) - func(theta + ei - ej) - func(theta - ei + ej) + func(theta - ei - ej)
            ) / (4 * step ** 2)
    return grad, hess, -np.linalg.solve(hess, grad)


def riccati_feedback(A, B, Q, R, Qf, horizon):
    """Finite-horizon discrete LQR feedback matrices ``u_t = K_t x_t``."""
    P = Qf
    gains = [None] * horizon
    for t in range(horizon - 1, -1, -1):
        K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ A + A.T @ P @ B @ K
        P = 0.5 * (P + P.T)
        gains[t] = K
    return gains


def plain_ilqr_gains(traj, model, cost):
    """Textbook iLQR backward recursion (no parameters, no regularization)."""
    ks, Ks, _ = plain_ilqr_backward(traj, model, cost)
    return ks, Ks


def plain_ilqr_backward(traj, model, cost):
    """Gains ``k_t``, ``K_t`` and the total decrement ``sum(Qu' Quu^-1 Qu)``."""
    theta = traj.params
    T = traj.horizon
    phi = cost.terminal_expansion(traj.states[-1], theta)
    Vx, Vxx = phi.phix, phi.phixx
    ks, Ks = [None] * T, [None] * T
    decrement = 0.0
    for t in range(T - 1, -1, -1):
        x, u = traj.states[t], traj.controls[t]
        l = cost.running_expansion(x, u, theta, t)
        f = model.derivatives(x, u, theta, t)
        Qx = l.Lx + f.Fx.T @ Vx
        Qu = l.Lu + f.Fu.T @ Vx
        Qxx = l.Lxx + f.Fx.T @ Vxx @ f.Fx
        Qux = l.Lxu.T + f.Fu.T @ Vxx @ f.Fx
        Quu = l.Luu + f.Fu.T @ Vxx @ f.Fu
        k = -np.linalg.solve(Quu, Qu)
        K = -np.linalg.solve(Quu, Qux)
        Vx = Qx + K.T @ Quu @ k + K.T @ Qu + Qux.T @ k
        Vxx = Qxx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
        Vxx = 0.5 * (Vxx + Vxx.T)
        ks[t], Ks[t] = k, K
        decrement += float(-k @ Qu)
    return ks, Ks, decrement


def plain_ddp_path(model, cost, x1, controls, iterations, rho=0.5, epsilon_min=1e-4, kappa=1e-4,
                   tolerance=1e-6):
    """
    Textbook iLQR iterations without regularization.

    Returns one ``(kind, cost, epsilon)`` row per iteration where ``kind`` is
    ``'accepted'``, ``'converged'`` or ``'rejected'``; the path ends at the
    first convergence or rejection.
    """
    theta = np.zeros(0)
    traj = rollout(model, cost, x1, controls, theta)
    path = []
    for _ in range(iterations):
        ks, Ks, decrement = plain_ilqr_backward(traj, model, cost)
        if decrement < tolerance:
            path.append(('converged', traj.cost, None))
            break
        accepted = None
        epsilon = 1.0
        while epsilon >= epsilon_min * (1.0 - 1e-12):
            candidate = _feedback_rollout(traj, ks, Ks, epsilon, model, cost)
            if candidate is not None and candidate.cost - traj.cost <= -kappa * epsilon * decrement:
                accepted = candidate
                break
            epsilon *= rho
        if accepted is None:
            path.append(('rejected', traj.cost, None))
            break
        traj = accepted
        path.append(('accepted', traj.cost, epsilon))
    return path


def _feedback_rollout(traj, ks, Ks, epsilon, model, cost):
    x = traj.states[0].copy()
    controls = np.empty_like(traj.controls)
    try:
        for t in range(traj.horizon):
            controls[t] = traj.controls[t] + (Ks[t] @ (x - traj.states[t]) + epsilon * ks[t])
            x = model.step(x, controls[t], traj.params, t)
            if not np.all(np.isfinite(x)):
                return None
        candidate = rollout(model, cost, traj.states[0], controls, traj.params)
    except DivergedRollout:
        return None
    return candidate if np.isfinite(candidate.cost) else None


def boxqp_by_enumeration(H, g, lower, upper):
    """
    Exact minimizer of ``0.5 x'Hx + g'x`` on a finite box.

    Tries every assignment of each component to free / lower / upper and
    keeps the best feasible stationary point.
    """
    n = g.size
    best_x, best_value = None, math.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        x = np.where(pattern == 1, lower, np.where(pattern == 2, upper, 0.0))
        free = pattern == 0
        if free.any():
            fixed = ~free
            rhs = g[free] + H[np.ix_(free, fixed)] @ x[fixed]
            x[free] = -np.linalg.solve(H[np.ix_(free, free)], rhs)
            if np.any(x < lower - 1e-12) or np.any(x > upper + 1e-12):
                continue
        value = float(g @ x + 0.5 * x @ H @ x)
        if value < best_value:
            best_x, best_value = x, value
    return best_x, best_value


def _rk4(field, x, u, h):
    k1 = field(x, u)
    k2 = field(x + 0.5 * h * k1, u)
    k3 = field(x + 0.5 * h * k2, u)
    k4 = field(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_modes_directly(seq, x1, controls, durations):
    """March every mode in physical time with RK4 substeps of at most ``seq.dt``."""
    x = np.array(x1, dtype=float)
    states = [x.copy()]
    t = 0
    for mode, steps, duration in zip(seq.modes, seq.steps_per_mode, durations):
        h = duration / steps
        substeps = 0 if h == 0 else max(1, math.ceil(h / seq.dt - 1e-9))
        for _ in range(steps):
            for _ in range(substeps):
                x = _rk4(mode.field, x, controls[t], h / substeps)
            states.append(x.copy())
            t += 1
    return np.array(states)
