"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Every function here must return exactly what its compiled twin returns for the
same inputs; ``tests/test_kernels.py`` checks the two against each other.
"""
from __future__ import annotations

import math

import numpy as np

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
THETA_LIMIT = 12 * 2 * math.pi / 360
X_LIMIT = 2.4


def _inverse_cdf(cum, u):
    # first index whose cumulative mass exceeds u, clamped for round-off at the top
    n = len(cum)
    j = 0
    while j < n - 1 and cum[j] <= u:
        j += 1
    return j


def simulate_tabular(cum_p, cum_pi, cum_rho, reward, state, t, horizon, u):
    """Roll a finite MDP forward ``len(u)`` steps under a fixed policy table.

    ``u`` holds three uniforms per step: action, next state, reset state.
    A positive ``horizon`` cuts episodes with a timeout and resamples from
    the initial distribution.
    """
    n = u.shape[0]
    states = np.empty(n, dtype=np.int64)
    actions = np.empty(n, dtype=np.int64)
    rewards = np.empty(n, dtype=np.float64)
    next_states = np.empty(n, dtype=np.int64)
    ts = np.empty(n, dtype=np.int64)
    timeouts = np.zeros(n, dtype=np.bool_)
    s = int(state)
    t = int(t)
    for i in range(n):
        a = _inverse_cdf(cum_pi[s], u[i, 0])
        s2 = _inverse_cdf(cum_p[s, a], u[i, 1])
        states[i] = s
        actions[i] = a
        rewards[i] = reward[s, a]
        next_states[i] = s2
        ts[i] = t
        t += 1
        if horizon > 0 and t >= horizon:
            timeouts[i] = True
            s = _inverse_cdf(cum_rho, u[i, 2])
            t = 0
        else:
            s = s2
    return states, actions, rewards, next_states, ts, timeouts, s, t


def gae(rewards, values, next_values, terminal, cut, gamma, lam):
    """λ-weighted sum of one-step TD errors, restarted wherever ``cut`` is set."""
    n = len(rewards)
    adv = np.empty(n, dtype=np.float64)
    running = 0.0
    for i in range(n - 1, -1, -1):
        boot = 0.0 if terminal[i] else gamma * next_values[i]
        delta = rewards[i] + boot - values[i]
        if cut[i]:
            running = delta
        else:
            running = delta + gamma * lam * running
        adv[i] = running
    return adv


def cartpole_dynamics(state, force):
    x, x_dot, theta, theta_dot = state
    costh = math.cos(theta)
    sinth = math.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sinth) / TOTAL_MASS
    thetaacc = (GRAVITY * sinth - costh * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * costh * costh / TOTAL_MASS)
    )
    xacc = temp - POLE_MASS_LENGTH * thetaacc * costh / TOTAL_MASS
    return (
        x + TAU * x_dot,
        x_dot + TAU * xacc,
        theta + TAU * theta_dot,
        theta_dot + TAU * thetaacc,
    )


def cartpole_failed(state):
    x, _, theta, _ = state
    return x < -X_LIMIT or x > X_LIMIT or theta < -THETA_LIMIT or theta > THETA_LIMIT


def _mlp_probs(params, sizes, x):
    off = 0
    h = np.asarray(x, dtype=np.float64)
    n_layers = len(sizes) - 1
    for layer in range(n_layers):
        n_in, n_out = sizes[layer], sizes[layer + 1]
        w = params[off:off + n_in * n_out].reshape(n_in, n_out)
        off += n_in * n_out
        b = params[off:off + n_out]
        off += n_out
        h = h @ w + b
        if layer < n_layers - 1:
            h = np.tanh(h)
    z = np.exp(h - h.max())
    return z / z.sum()


def cartpole_rollout(params, sizes, state, t, horizon, u):
    """Cart-pole steps with actions drawn from a tanh MLP softmax policy.

    ``u`` holds five uniforms per step: one for the action, four for the
    reset state used if the episode ends on that step.
    """
    n = u.shape[0]
    obs = np.empty((n, 4))
    next_obs = np.empty((n, 4))
    actions = np.empty(n, dtype=np.int64)
    rewards = np.ones(n)
    ts = np.empty(n, dtype=np.int64)
    terminal = np.zeros(n, dtype=np.bool_)
    timeouts = np.zeros(n, dtype=np.bool_)
    s = tuple(float(v) for v in state)
    t = int(t)
    for i in range(n):
        probs = _mlp_probs(params, sizes, s)
        a = _inverse_cdf(np.cumsum(probs), u[i, 0])
        s2 = cartpole_dynamics(s, FORCE_MAG if a == 1 else -FORCE_MAG)
        obs[i] = s
        next_obs[i] = s2
        actions[i] = a
        ts[i] = t
        t += 1
        if cartpole_failed(s2):
            terminal[i] = True
        elif horizon > 0 and t >= horizon:
            timeouts[i] = True
        if terminal[i] or timeouts[i]:
            s = tuple(-0.05 + 0.1 * u[i, k] for k in range(1, 5))
            t = 0
        else:
            s = s2
    return obs, actions, rewards, next_obs, ts, terminal, timeouts, np.array(s), t
