"""On-policy data collection and the buffer-based state-weighting estimators."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InputError
from .oracle import StateWeighting, discounted_stationary
from .tabular import SoftmaxPolicy, transition_under_policy

_generation = itertools.count()


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int
    t: int
    terminal: bool = False
    timeout: bool = False


@dataclass
class Buffer:
    """Ordered on-policy transitions in column form.

    ``state``/``next_state`` are tabular state ids (-1 for continuous envs);
    ``obs``/``next_obs`` are what networks see. An episode segment ends at
    every terminal or timeout flag and at the end of the buffer.
    """

    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    t: np.ndarray
    terminal: np.ndarray
    timeout: np.ndarray
    obs: np.ndarray
    next_obs: np.ndarray
    capacity: int | None = None
    generation: int = field(default_factory=lambda: next(_generation))

    def __post_init__(self):
        n = len(self.state)
        for name in ("action", "reward", "next_state", "t", "terminal", "timeout", "obs", "next_obs"):
            if len(getattr(self, name)) != n:
                raise InputError(f"column {name!r} has {len(getattr(self, name))} rows, expected {n}")
        if self.capacity is None:
            self.capacity = n
        if n > self.capacity:
            raise InputError(f"{n} transitions exceed capacity {self.capacity}")
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.timeout = np.asarray(self.timeout, dtype=bool)
        self.t = np.asarray(self.t, dtype=np.int64)
        if (self.t < 0).any():
            raise InputError("time indices are nonnegative")
        if (self.terminal & self.timeout).any():
            raise InputError("a transition cannot be both terminal and a timeout")
        cont = ~(self.terminal | self.timeout)[:-1]
        if n > 1 and (self.t[1:][cont] != self.t[:-1][cont] + 1).any():
            raise InputError("time index must increase by one inside an episode")
        if n > 1 and (self.t[1:][~cont] != 0).any():
            raise InputError("episodes must restart at t = 0 after a terminal or timeout")

    def __len__(self):
        return len(self.state)

    @property
    def episode_starts(self) -> np.ndarray:
        """Index of the first transition of each episode segment."""
        if len(self) == 0:
            return np.zeros(0, dtype=np.int64)
        ends = np.flatnonzero(self.terminal | self.timeout)
        return np.concatenate([[0], ends[ends < len(self) - 1] + 1]).astype(np.int64)

    @property
    def episode(self) -> np.ndarray:
        ids = np.zeros(len(self), dtype=np.int64)
        ids[self.episode_starts[1:]] = 1
        return np.cumsum(ids)

    @property
    def n_trajectories(self) -> int:
        return len(self.episode_starts)

    @property
    def nominal_horizon(self) -> float:
        """T = |D| / k."""
        return len(self) / max(self.n_trajectories, 1)

    def transitions(self):
        for i in range(len(self)):
            yield Transition(int(self.state[i]), int(self.action[i]), float(self.reward[i]),
                             int(self.next_state[i]), int(self.t[i]), bool(self.terminal[i]),
                             bool(self.timeout[i]))

    @classmethod
    def from_transitions(cls, transitions, observations=None, capacity=None) -> "Buffer":
        rows = list(transitions)
        cols = {name: np.array([getattr(tr, name) for tr in rows]) for name in Transition.__dataclass_fields__}
        state = cols["state"].astype(np.int64)
        nxt = cols["next_state"].astype(np.int64)
        if observations is None:
            obs, next_obs = state[:, None].astype(float), nxt[:, None].astype(float)
        else:
            observations = np.asarray(observations, float)
            obs, next_obs = observations[state], observations[nxt]
        return cls(state, cols["action"].astype(np.int64), cols["reward"].astype(float), nxt,
                   cols["t"], cols["terminal"], cols["timeout"], obs, next_obs, capacity=capacity)

    @classmethod
    def from_states(cls, trajectories, observations=None) -> "Buffer":
        """Fixture helper: state sequences of whole trajectories, zero rewards, action 0."""
        rows = []
        for traj in trajectories:
            traj = list(traj)
            for i, s in enumerate(traj):
                nxt = traj[i + 1] if i + 1 < len(traj) else s
                rows.append(Transition(s, 0, 0.0, nxt, i, False, i == len(traj) - 1))
        return cls.from_transitions(rows, observations)

    # CSV --------------------------------------------------------------------------

    CSV_COLUMNS = ("episode", "t", "state", "action", "reward", "terminal", "timeout", "next_state")

    def to_csv(self, path) -> None:
        ep = self.episode
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_COLUMNS)
            for i in range(len(self)):
                w.writerow([int(ep[i]), int(self.t[i]), int(self.state[i]), int(self.action[i]),
                            repr(float(self.reward[i])), int(self.terminal[i]), int(self.timeout[i]),
                            int(self.next_state[i])])

    @classmethod
    def from_csv(cls, path, observations=None) -> "Buffer":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        trs = [Transition(int(r["state"]), int(r["action"]), float(r["reward"]),
                          int(r.get("next_state", -1) or -1), int(r["t"]),
                          bool(int(r["terminal"])), bool(int(r["timeout"]))) for r in rows]
        return cls.from_transitions(trs, observations)


def policy_table(policy, env) -> np.ndarray:
    """(S, A) action probabilities of ``policy`` on every state of a tabular env."""
    if hasattr(policy, "probs_table_for"):
        return policy.probs_table_for(env)
    if isinstance(policy, SoftmaxPolicy):
        return policy.probs_table()
    table = np.asarray(policy, dtype=float)
    if table.shape != (env.n_states, env.n_actions):
        raise InputError(f"policy table {table.shape} does not match env")
    return table


def collect(env, policy, n: int, reset: bool = False) -> Buffer:
    """Exactly ``n`` on-policy transitions; episodes restart automatically.

    Tabular envs accept anything :func:`policy_table` understands; the
    cart-pole env needs a policy exposing an MLP as ``.net``.
    """
    if n < 1:
        raise InputError("collect needs n >= 1")
    if reset:
        env.reset()
    if getattr(env, "mdp", None) is not None:
        data = env.rollout(policy_table(policy, env), n)
    else:
        net = getattr(policy, "net", policy)
        data = env.rollout(net.params, net.sizes, n)
    return Buffer(**data, capacity=n)


def _n_states(buffer, n_states):
    return int(buffer.state.max()) + 1 if n_states is None else int(n_states)


def sampling_distribution(buffer: Buffer, n_states: int | None = None) -> StateWeighting:
    """d̂_D(s): visit frequency of s in the buffer."""
    if len(buffer) == 0:
        raise InputError("sampling distribution of an empty buffer")
    counts = np.bincount(buffer.state, minlength=_n_states(buffer, n_states)).astype(float)
    return StateWeighting(counts / len(buffer), "distribution", support=counts > 0)


def kt_weighting(buffer: Buffer, gamma: float, horizon: float | None = None) -> np.ndarray:
    """Per-transition weight T(1-γ)γ^{t_i} of the γ^t correction."""
    T = buffer.nominal_horizon if horizon is None else horizon
    return T * (1.0 - gamma) * np.power(gamma, buffer.t.astype(float))


def per_state_mean(values, states, n_states: int):
    counts = np.bincount(states, minlength=n_states).astype(float)
    sums = np.bincount(states, weights=values, minlength=n_states)
    mean = np.divide(sums, counts, out=np.zeros(n_states), where=counts > 0)
    return mean, counts > 0


def buffer_correction(buffer: Buffer, gamma: float, n_states: int | None = None,
                      horizon: float | None = None) -> StateWeighting:
    """ĉ_D(s) = (1-γ) T · mean of γ^{t_i} over the visits to s.

    Unvisited states are outside ``support`` and carry 0.
    """
    if len(buffer) == 0:
        raise InputError("correction of an empty buffer")
    mean, visited = per_state_mean(kt_weighting(buffer, gamma, horizon), buffer.state, _n_states(buffer, n_states))
    return StateWeighting(mean, "correction", support=visited)


def sampled_kt_emphasis(buffer: Buffer, gamma: float, rng: np.random.Generator,
                        n_states: int | None = None, horizon: float | None = None) -> np.ndarray:
    """d̂_D(s)·T(1-γ)γ^{K(s)} with K(s) drawn uniformly among the visit times of s."""
    S = _n_states(buffer, n_states)
    keys = rng.random(len(buffer))
    order = np.lexsort((keys, buffer.state))
    states_sorted = buffer.state[order]
    last = np.flatnonzero(np.r_[states_sorted[1:] != states_sorted[:-1], True])
    pick = order[last]
    w = kt_weighting(buffer, gamma, horizon)
    out = np.zeros(S)
    out[buffer.state[pick]] = w[pick]
    return sampling_distribution(buffer, S).values * out


def sample_size_bound(eps: float, delta: float, n_states: int, gamma: float) -> tuple[int, int]:
    """Smallest (k, T) with k ≥ (2/ε²) log(|S|/δ) and T ≥ log(ε/2) / log γ, T ≥ 1."""
    if not (0 < delta < 1) or eps <= 0:
        raise InputError("need eps > 0 and delta in (0, 1)")
    k = math.ceil(2.0 / eps ** 2 * math.log(n_states / delta) - 1e-9)
    T = max(1, math.ceil(math.log(eps / 2.0) / math.log(gamma) - 1e-9))
    return max(k, 1), T


# bias / variance analysis --------------------------------------------------------

SCHEMES = ("uncorrected", "gamma_t", "averaging", "averaging_net")


def emphasis(buffer: Buffer, gamma: float, scheme: str, n_states: int, rng=None,
             correction=None, horizon: float | None = None) -> np.ndarray:
    """State emphasis of one buffer under ``scheme``.

    ``averaging_net`` needs ``correction``: a length-S array of correction
    values (e.g. a network's output already converted to the ĉ scale).
    """
    d_hat = sampling_distribution(buffer, n_states).values
    if scheme == "uncorrected":
        return d_hat
    if scheme == "gamma_t":
        if rng is None:
            raise InputError("gamma_t emphasis samples K(s); pass rng")
        return sampled_kt_emphasis(buffer, gamma, rng, n_states, horizon)
    if scheme == "averaging":
        return d_hat * buffer_correction(buffer, gamma, n_states, horizon).values
    if scheme == "averaging_net":
        if correction is None:
            raise InputError("averaging_net emphasis needs a correction vector")
        return d_hat * np.asarray(correction, dtype=float)
    raise InputError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


def oracle_target(env, policy) -> np.ndarray:
    mdp = env.mdp
    if mdp is None:
        raise InputError("bias analysis needs a tabular environment")
    P = transition_under_policy(mdp, policy_table(policy, env))
    return discounted_stationary(P, mdp.initial_dist, mdp.gamma).values


def emphasis_samples(env, policy, schemes, n_buffers: int, buffer_size: int, rng=None,
                     correction=None) -> tuple[dict, np.ndarray]:
    """Emphasis vectors of every scheme on the same ``n_buffers`` fresh buffers.

    Returns ``({scheme: (n_buffers, S) array}, d_{π,γ})``.
    """
    if getattr(env, "mdp", None) is None:
        raise InputError("bias analysis needs a tabular environment")
    rng = np.random.default_rng(rng)
    target = oracle_target(env, policy)
    S, gamma = env.n_states, env.mdp.gamma
    out = {s: np.zeros((n_buffers, S)) for s in schemes}
    for b in range(n_buffers):
        buf = collect(env, policy, buffer_size, reset=True)
        for s in schemes:
            out[s][b] = emphasis(buf, gamma, s, S, rng=rng, correction=correction)
    return out, target


def bias_variance(samples: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """(Σ_s (mean_b e_b(s) - d(s))², mean_s Var_b e_b(s))."""
    samples = np.asarray(samples)
    bias = samples.mean(axis=0) - target
    return float(bias @ bias), float(samples.var(axis=0, ddof=1).mean() if len(samples) > 1 else 0.0)


def emphasis_bias_variance(env, policy, scheme: str, n_buffers: int, buffer_size: int, rng=None,
                           correction=None) -> tuple[float, float]:
    samples, target = emphasis_samples(env, policy, [scheme], n_buffers, buffer_size, rng, correction)
    return bias_variance(samples[scheme], target)


class BiasRatio(NamedTuple):
    ratio: float
    degenerate: bool  # denominator was zero


def bias_ratio(env, policy, buffers, correction=None, target=None) -> BiasRatio:
    """Σ_i |ĉ d̂ - d_{π,γ}|(S_i) / Σ_i |d̂ - d_{π,γ}|(S_i), summed over all buffer samples.

    ``correction`` is a length-S vector or a callable ``buffer -> vector``;
    by default each buffer's own ĉ_D is used.
    """
    target = oracle_target(env, policy) if target is None else np.asarray(target)
    S, gamma = env.n_states, env.mdp.gamma
    num = den = 0.0
    for buf in buffers:
        d_hat = sampling_distribution(buf, S).values
        if correction is None:
            c = buffer_correction(buf, gamma, S).values
        elif callable(correction):
            c = np.asarray(correction(buf), dtype=float)
        else:
            c = np.asarray(correction, dtype=float)
        num += np.abs(c * d_hat - target)[buf.state].sum()
        den += np.abs(d_hat - target)[buf.state].sum()
    if den == 0.0:
        return BiasRatio(0.0, True)
    return BiasRatio(float(num / den), False)
