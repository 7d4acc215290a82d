# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, exp, tanh

cnp.import_array()

cdef double GRAVITY = 9.8
cdef double MASS_POLE = 0.1
cdef double TOTAL_MASS = 1.1
cdef double HALF_LENGTH = 0.5
cdef double POLE_MASS_LENGTH = 0.05
cdef double FORCE_MAG = 10.0
cdef double TAU = 0.02
cdef double THETA_LIMIT = 12 * 2 * 3.141592653589793 / 360
cdef double X_LIMIT = 2.4


cdef inline Py_ssize_t _inverse_cdf(const double[:] cum, double u) nogil:
    cdef Py_ssize_t n = cum.shape[0]
    cdef Py_ssize_t j = 0
    while j < n - 1 and cum[j] <= u:
        j += 1
    return j


def simulate_tabular(const double[:, :, :] cum_p, const double[:, :] cum_pi,
                     const double[:] cum_rho, const double[:, :] reward,
                     long state, long t, long horizon, const double[:, :] u):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t i, a, s2
    cdef Py_ssize_t s = state
    states_a = np.empty(n, dtype=np.int64)
    actions_a = np.empty(n, dtype=np.int64)
    rewards_a = np.empty(n, dtype=np.float64)
    next_a = np.empty(n, dtype=np.int64)
    ts_a = np.empty(n, dtype=np.int64)
    timeouts_a = np.zeros(n, dtype=np.bool_)
    cdef long long[:] states = states_a
    cdef long long[:] actions = actions_a
    cdef double[:] rewards = rewards_a
    cdef long long[:] next_states = next_a
    cdef long long[:] ts = ts_a
    cdef cnp.npy_bool[:] timeouts = timeouts_a
    with nogil:
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
    return states_a, actions_a, rewards_a, next_a, ts_a, timeouts_a, int(s), int(t)


def gae(const double[:] rewards, const double[:] values, const double[:] next_values,
        const cnp.npy_bool[:] terminal, const cnp.npy_bool[:] cut,
        double gamma, double lam):
    cdef Py_ssize_t n = rewards.shape[0]
    cdef Py_ssize_t i
    cdef double running = 0.0
    cdef double boot, delta
    adv_a = np.empty(n, dtype=np.float64)
    cdef double[:] adv = adv_a
    with nogil:
        for i in range(n - 1, -1, -1):
            boot = 0.0 if terminal[i] else gamma * next_values[i]
            delta = rewards[i] + boot - values[i]
            if cut[i]:
                running = delta
            else:
                running = delta + gamma * lam * running
            adv[i] = running
    return adv_a


cdef inline void _dynamics(double* s, double force, double* out) nogil:
    cdef double costh = cos(s[2])
    cdef double sinth = sin(s[2])
    cdef double temp = (force + POLE_MASS_LENGTH * s[3] * s[3] * sinth) / TOTAL_MASS
    cdef double thetaacc = (GRAVITY * sinth - costh * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * costh * costh / TOTAL_MASS))
    cdef double xacc = temp - POLE_MASS_LENGTH * thetaacc * costh / TOTAL_MASS
    out[0] = s[0] + TAU * s[1]
    out[1] = s[1] + TAU * xacc
    out[2] = s[2] + TAU * s[3]
    out[3] = s[3] + TAU * thetaacc


def cartpole_rollout(const double[:] params, sizes, state, long t, long horizon,
                     const double[:, :] u):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t n_layers = len(sizes) - 1
    cdef long[:] sz = np.asarray(sizes, dtype=np.int_)
    cdef Py_ssize_t width = max(sizes)
    h_a = np.zeros(width)
    g_a = np.zeros(width)
    cum_a = np.zeros(sizes[n_layers])
    cdef double[:] h = h_a
    cdef double[:] g = g_a
    cdef double[:] cum = cum_a
    cdef double s[4]
    cdef double s2[4]
    cdef Py_ssize_t i, k, layer, r, c, off, n_in, n_out, a
    cdef double acc, mx, total
    cdef bint failed
    for k in range(4):
        s[k] = state[k]

    obs_a = np.empty((n, 4))
    next_a = np.empty((n, 4))
    actions_a = np.empty(n, dtype=np.int64)
    rewards_a = np.ones(n)
    ts_a = np.empty(n, dtype=np.int64)
    terminal_a = np.zeros(n, dtype=np.bool_)
    timeouts_a = np.zeros(n, dtype=np.bool_)
    cdef double[:, :] obs = obs_a
    cdef double[:, :] next_obs = next_a
    cdef long long[:] actions = actions_a
    cdef long long[:] ts = ts_a
    cdef cnp.npy_bool[:] terminal = terminal_a
    cdef cnp.npy_bool[:] timeouts = timeouts_a

    with nogil:
        for i in range(n):
            for k in range(4):
                h[k] = s[k]
            off = 0
            for layer in range(n_layers):
                n_in = sz[layer]
                n_out = sz[layer + 1]
                for c in range(n_out):
                    acc = 0.0
                    for r in range(n_in):
                        acc = acc + h[r] * params[off + r * n_out + c]
                    g[c] = acc + params[off + n_in * n_out + c]
                off += n_in * n_out + n_out
                for c in range(n_out):
                    h[c] = tanh(g[c]) if layer < n_layers - 1 else g[c]
            mx = h[0]
            for c in range(1, n_out):
                if h[c] > mx:
                    mx = h[c]
            total = 0.0
            for c in range(n_out):
                g[c] = exp(h[c] - mx)
                total = total + g[c]
            acc = 0.0
            for c in range(n_out):
                acc = acc + g[c] / total
                cum[c] = acc
            a = _inverse_cdf(cum, u[i, 0])
            _dynamics(s, FORCE_MAG if a == 1 else -FORCE_MAG, s2)
            for k in range(4):
                obs[i, k] = s[k]
                next_obs[i, k] = s2[k]
            actions[i] = a
            ts[i] = t
            t += 1
            failed = s2[0] < -X_LIMIT or s2[0] > X_LIMIT or s2[2] < -THETA_LIMIT or s2[2] > THETA_LIMIT
            if failed:
                terminal[i] = True
            elif horizon > 0 and t >= horizon:
                timeouts[i] = True
            if terminal[i] or timeouts[i]:
                for k in range(4):
                    s[k] = -0.05 + 0.1 * u[i, k + 1]
                t = 0
            else:
                for k in range(4):
                    s[k] = s2[k]
    final = np.array([s[0], s[1], s[2], s[3]])
    return obs_a, actions_a, rewards_a, next_a, ts_a, terminal_a, timeouts_a, final, int(t)
