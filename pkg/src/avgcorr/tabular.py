"""Finite MDPs and linear-softmax policies over explicit (state, action) features."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError

CONSTRUCT_TOL = 1e-12
ARITH_TOL = 1e-10


def _frozen(x, dtype=np.float64):
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TabularMdp:
    """Dense finite MDP: ``transition[s, a, s']``, ``reward[s, a]``, discount and start law."""

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray

    def __post_init__(self):
        P = _frozen(self.transition)
        r = _frozen(self.reward)
        rho = _frozen(self.initial_dist)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InputError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if r.shape != (S, A):
            raise InputError(f"reward must have shape {(S, A)}, got {r.shape}")
        if rho.shape != (S,):
            raise InputError(f"initial_dist must have shape {(S,)}, got {rho.shape}")
        if (P < 0).any() or np.abs(P.sum(axis=2) - 1).max() > CONSTRUCT_TOL:
            raise InputError("every transition row must be a probability vector")
        if (rho < 0).any() or abs(rho.sum() - 1) > CONSTRUCT_TOL:
            raise InputError("initial_dist must be a probability vector")
        if not 0.0 < float(self.gamma) < 1.0:
            raise InputError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.transition, self.reward, gamma, self.initial_dist)

    def with_initial(self, initial_dist) -> "TabularMdp":
        return TabularMdp(self.transition, self.reward, self.gamma, initial_dist)

    # plain-text fixture format ------------------------------------------------

    def to_text(self) -> str:
        """Serialize as a header (``n_states``, ``n_actions``, ``gamma``) followed by
        dense rows: one line for ρ, ``n_states`` reward lines, and one transition
        line per (s, a) pair in row-major order."""
        fmt = lambda row: " ".join(repr(float(v)) for v in row)  # noqa: E731
        lines = [
            "# tabular-mdp v1",
            f"n_states {self.n_states}",
            f"n_actions {self.n_actions}",
            f"gamma {self.gamma!r}",
            "initial_dist",
            fmt(self.initial_dist),
            "reward",
        ]
        lines += [fmt(row) for row in self.reward]
        lines.append("transition")
        lines += [fmt(self.transition[s, a]) for s in range(self.n_states) for a in range(self.n_actions)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TabularMdp":
        rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        try:
            header = dict(rows[i].split(maxsplit=1) for i in range(3))
            S, A, gamma = int(header["n_states"]), int(header["n_actions"]), float(header["gamma"])
            if rows[3] != "initial_dist" or rows[5] != "reward" or rows[6 + S] != "transition":
                raise InputError("section markers out of place")
            nums = lambda ln: [float(v) for v in ln.split()]  # noqa: E731
            rho = nums(rows[4])
            reward = [nums(ln) for ln in rows[6:6 + S]]
            trans = [nums(ln) for ln in rows[7 + S:7 + S + S * A]]
            if len(trans) != S * A:
                raise InputError("truncated transition block")
        except (KeyError, IndexError, ValueError) as exc:
            raise InputError(f"malformed tabular-mdp text: {exc}") from exc
        return cls(np.array(trans).reshape(S, A, S), np.array(reward), gamma, np.array(rho))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "TabularMdp":
        return cls.from_text(Path(path).read_text())


def _softmax(logits):
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class SoftmaxPolicy:
    """π_θ(a|s) ∝ exp(φ(s, a)·θ).

    ``features`` has shape (S, A, d). Sharing feature columns across states
    models aliasing; :meth:`tabular` gives the one-hot default.
    """

    theta: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        theta = _frozen(np.atleast_1d(self.theta))
        feats = _frozen(self.features)
        if feats.ndim != 3 or feats.shape[2] != theta.shape[0]:
            raise InputError(f"features {feats.shape} incompatible with theta {theta.shape}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "features", feats)

    @classmethod
    def tabular(cls, n_states: int, n_actions: int, theta=None) -> "SoftmaxPolicy":
        feats = np.eye(n_states * n_actions).reshape(n_states, n_actions, n_states * n_actions)
        if theta is None:
            theta = np.zeros(n_states * n_actions)
        return cls(theta, feats)

    @property
    def n_states(self) -> int:
        return self.features.shape[0]

    @property
    def n_actions(self) -> int:
        return self.features.shape[1]

    @property
    def n_params(self) -> int:
        return self.theta.shape[0]

    def with_theta(self, theta) -> "SoftmaxPolicy":
        return SoftmaxPolicy(theta, self.features)

    def logits(self) -> np.ndarray:
        return self.features @ self.theta

    def probs_table(self) -> np.ndarray:
        """(S, A) action probabilities."""
        return _softmax(self.logits())

    def score_table(self) -> np.ndarray:
        """(S, A, d) array of ∇_θ log π_θ(a|s) = φ(s,a) − Σ_b π(b|s) φ(s,b)."""
        pi = self.probs_table()
        mean_feat = np.einsum("sa,sad->sd", pi, self.features)
        return self.features - mean_feat[:, None, :]

    def _check_state(self, state):
        if not 0 <= int(state) < self.n_states:
            raise InputError(f"state {state} out of range [0, {self.n_states})")

    def probs(self, state: int) -> np.ndarray:
        self._check_state(state)
        return _softmax(self.features[int(state)] @ self.theta)

    def log_prob_grad(self, state: int, action: int) -> np.ndarray:
        self._check_state(state)
        if not 0 <= int(action) < self.n_actions:
            raise InputError(f"action {action} out of range [0, {self.n_actions})")
        phi = self.features[int(state)]
        pi = _softmax(phi @ self.theta)
        return phi[int(action)] - pi @ phi


def policy_probs(policy: SoftmaxPolicy, state: int) -> np.ndarray:
    return policy.probs(state)


def log_prob_grad(policy: SoftmaxPolicy, state: int, action: int) -> np.ndarray:
    return policy.log_prob_grad(state, action)


def as_probs_table(policy, mdp: TabularMdp | None = None) -> np.ndarray:
    """Accept a :class:`SoftmaxPolicy` or an explicit (S, A) probability table."""
    table = policy.probs_table() if isinstance(policy, SoftmaxPolicy) else np.asarray(policy, dtype=float)
    if mdp is not None and table.shape != (mdp.n_states, mdp.n_actions):
        raise InputError(f"policy table {table.shape} does not match MDP {(mdp.n_states, mdp.n_actions)}")
    return table


def transition_under_policy(mdp: TabularMdp, policy) -> np.ndarray:
    """State-to-state kernel p_π(s'|s) = Σ_a π(a|s) p(s'|s, a)."""
    pi = as_probs_table(policy, mdp)
    return np.einsum("sa,sat->st", pi, mdp.transition)


def reward_under_policy(mdp: TabularMdp, policy) -> np.ndarray:
    return (as_probs_table(policy, mdp) * mdp.reward).sum(axis=1)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               initial_dist=None) -> TabularMdp:
    """Dense random MDP; every transition row has full support, so any softmax
    policy induces an irreducible aperiodic chain."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.normal(size=(n_states, n_actions))
    rho = rng.dirichlet(np.ones(n_states)) if initial_dist is None else initial_dist
    return TabularMdp(P, r, gamma, rho)
