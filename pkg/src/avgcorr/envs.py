"""Desk-scale environments.

Tabular environments wrap a :class:`TabularMdp` so the simulator and the exact
oracle see the same dynamics. All environments auto-reset when an episode ends:
``step`` reports the true successor in ``next_state`` and the environment then
holds the fresh start observation in ``obs``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._kernels_py import cartpole_dynamics, cartpole_failed
from .errors import InputError
from .tabular import TabularMdp


@dataclass(frozen=True)
class EnvStep:
    next_state: np.ndarray
    reward: float
    terminal: bool
    timeout: bool
    t: int  # steps since the last reset, after this step


def _cum(p):
    c = np.cumsum(p, axis=-1)
    c[..., -1] = 1.0
    return c


class TabularEnv:
    """Simulator for a finite MDP with optional timeout horizon (no terminal states)."""

    def __init__(self, mdp: TabularMdp, observations=None, horizon: int = 0, seed=None, name="tabular"):
        self.mdp = mdp
        self.name = name
        self.observations = np.eye(mdp.n_states) if observations is None else np.asarray(observations, float)
        if self.observations.shape[0] != mdp.n_states:
            raise InputError("need one observation row per state")
        self.horizon = int(horizon)
        self.rng = np.random.default_rng(seed)
        self._cum_p = _cum(mdp.transition)
        self._cum_rho = _cum(mdp.initial_dist)
        self.state = 0
        self.t = 0
        self.reset()

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    @property
    def obs(self) -> np.ndarray:
        return self.observations[self.state]

    def reset(self) -> np.ndarray:
        self.state = int(np.searchsorted(self._cum_rho, self.rng.random(), side="right"))
        self.state = min(self.state, self.n_states - 1)
        self.t = 0
        return self.obs

    def step(self, action: int) -> EnvStep:
        if not 0 <= action < self.n_actions:
            raise InputError(f"action {action} out of range")
        s = self.state
        s2 = min(int(np.searchsorted(self._cum_p[s, action], self.rng.random(), side="right")), self.n_states - 1)
        reward = float(self.mdp.reward[s, action])
        self.t += 1
        timeout = self.horizon > 0 and self.t >= self.horizon
        next_obs = self.observations[s2]
        if timeout:
            self.reset()
        else:
            self.state = s2
        return EnvStep(next_obs, reward, False, timeout, self.t)

    def rollout(self, probs_table: np.ndarray, n: int) -> dict:
        """``n`` consecutive on-policy steps for a fixed (S, A) policy table."""
        u = self.rng.random((n, 3))
        s, a, r, s2, ts, timeouts, self.state, self.t = kernels.simulate_tabular(
            self._cum_p, _cum(np.asarray(probs_table, float)), self._cum_rho, self.mdp.reward,
            self.state, self.t, self.horizon, u,
        )
        return dict(
            state=s, action=a, reward=r, next_state=s2, t=ts,
            terminal=np.zeros(n, dtype=bool), timeout=timeouts,
            obs=self.observations[s], next_obs=self.observations[s2],
        )


def two_state_mdp(gamma: float = 0.9) -> TabularMdp:
    """Both actions swap the state; rewards in state 2 are the negation of state 1."""
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = 1.0
    P[1, :, 0] = 1.0
    r = np.array([[1.0, -1.0], [-1.0, 1.0]])  # action 0 = top, 1 = bottom
    return TabularMdp(P, r, gamma, np.array([1.0, 0.0]))


def two_state_features() -> np.ndarray:
    """One shared scalar parameter: π(top) = e^θ / (1 + e^θ) in both states."""
    return np.array([[[1.0], [0.0]], [[1.0], [0.0]]])


def two_state_env(gamma: float = 0.9, horizon: int = 0, seed=None) -> TabularEnv:
    return TabularEnv(two_state_mdp(gamma), np.eye(2), horizon=horizon, seed=seed, name="two_state")


GRID = 9
CENTER = (4, 4)
REACHER_MOVES = np.array([(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)])
REACHER_ACTION_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
REACHER_HORIZON = 500


def reacher_state(x: int, y: int) -> int:
    return x * GRID + y


def reacher_coords(state: int) -> tuple[int, int]:
    return divmod(int(state), GRID)


def discrete_reacher_mdp(gamma: float = 0.99) -> TabularMdp:
    """9×9 grid, king moves clamped at the walls, -1 per step off-center.

    The center pays 0 and then relocates the agent uniformly over all cells.
    """
    n = GRID * GRID
    P = np.zeros((n, len(REACHER_MOVES), n))
    r = -np.ones((n, len(REACHER_MOVES)))
    center = reacher_state(*CENTER)
    for s in range(n):
        x, y = reacher_coords(s)
        for a, (dx, dy) in enumerate(REACHER_MOVES):
            if s == center:
                P[s, a, :] = 1.0 / n
            else:
                nx = min(max(x + dx, 0), GRID - 1)
                ny = min(max(y + dy, 0), GRID - 1)
                P[s, a, reacher_state(nx, ny)] = 1.0
    r[center, :] = 0.0
    return TabularMdp(P, r, gamma, np.full(n, 1.0 / n))


def reacher_observations() -> np.ndarray:
    coords = np.array([reacher_coords(s) for s in range(GRID * GRID)], dtype=float)
    return (coords - np.array(CENTER)) / CENTER[0]


def discrete_reacher_env(gamma: float = 0.99, horizon: int = REACHER_HORIZON, seed=None) -> TabularEnv:
    return TabularEnv(discrete_reacher_mdp(gamma), reacher_observations(), horizon=horizon, seed=seed,
                      name="discrete_reacher")


class CartPoleEnv:
    """Classic cart-pole with Euler integration, +1 reward per step, 500-step timeout."""

    name = "cartpole"
    n_actions = 2
    obs_dim = 4
    mdp = None

    def __init__(self, horizon: int = 500, seed=None):
        self.horizon = int(horizon)
        self.rng = np.random.default_rng(seed)
        self.reset()

    dynamics = staticmethod(cartpole_dynamics)
    failed = staticmethod(cartpole_failed)

    def reset(self) -> np.ndarray:
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        self.t = 0
        return self.obs

    @property
    def obs(self) -> np.ndarray:
        return np.array(self.state, dtype=float)

    def step(self, action: int) -> EnvStep:
        if action not in (0, 1):
            raise InputError(f"action {action} out of range")
        nxt = np.array(cartpole_dynamics(self.state, 10.0 if action == 1 else -10.0))
        self.t += 1
        terminal = bool(cartpole_failed(nxt))
        timeout = not terminal and self.horizon > 0 and self.t >= self.horizon
        if terminal or timeout:
            self.reset()
        else:
            self.state = nxt
        return EnvStep(nxt, 1.0, terminal, timeout, self.t)

    def rollout(self, params: np.ndarray, sizes, n: int) -> dict:
        """``n`` steps under a tanh-MLP softmax policy given by flat ``params``."""
        u = self.rng.random((n, 5))
        obs, a, r, nxt, ts, term, tout, self.state, self.t = kernels.cartpole_rollout(
            np.ascontiguousarray(params, dtype=float), list(sizes), np.asarray(self.state, float),
            self.t, self.horizon, u,
        )
        minus = -np.ones(n, dtype=np.int64)
        return dict(state=minus, action=a, reward=r, next_state=minus, t=ts,
                    terminal=term, timeout=tout, obs=obs, next_obs=nxt)


ENV_NAMES = ("two_state", "discrete_reacher", "cartpole")


def make_env(name: str, seed=None, gamma: float = 0.9, horizon: int | None = None):
    if name == "two_state":
        return two_state_env(gamma, horizon=horizon or 0, seed=seed)
    if name == "discrete_reacher":
        return discrete_reacher_env(gamma, horizon=horizon or REACHER_HORIZON, seed=seed)
    if name == "cartpole":
        return CartPoleEnv(horizon=horizon or 500, seed=seed)
    raise InputError(f"unknown environment {name!r}; choose from {ENV_NAMES}")
