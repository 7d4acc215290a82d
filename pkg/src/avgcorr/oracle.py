"""Exact quantities for finite MDPs, computed by dense linear solves.

These are the ground truth every sampled or learned estimate is checked against.
The objective carries the (1 - γ) prefactor: J(π) = (1 - γ) ρᵀ v_π.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import InputError, ModelError
from .tabular import ARITH_TOL, SoftmaxPolicy, TabularMdp, as_probs_table, transition_under_policy

WEIGHTING_KINDS = ("distribution", "correction", "emphasis")
GRADIENT_SCHEMES = ("true_discounted", "mismatched", "averaging_corrected", "gamma_t_corrected")


@dataclass(frozen=True)
class StateWeighting:
    """Nonnegative vector over states.

    ``support`` marks the states the weighting is defined on; buffer-based
    corrections leave unvisited states out of it.
    """

    values: np.ndarray
    kind: str
    support: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in WEIGHTING_KINDS:
            raise InputError(f"unknown weighting kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        if self.kind == "distribution" and abs(vals.sum() - 1.0) > ARITH_TOL:
            raise InputError(f"distribution sums to {vals.sum()!r}")
        if (vals < 0).any():
            raise InputError("state weightings are nonnegative")
        object.__setattr__(self, "values", vals)
        if self.support is None:
            object.__setattr__(self, "support", np.ones(vals.shape, dtype=bool))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, idx):
        return self.values[idx]


@dataclass(frozen=True)
class GradientEstimate:
    vector: np.ndarray
    scheme: str

    def __post_init__(self):
        if self.scheme not in GRADIENT_SCHEMES:
            raise InputError(f"unknown gradient scheme {self.scheme!r}")
        vec = np.asarray(self.vector, dtype=float)
        if not np.isfinite(vec).all():
            raise ModelError(f"{self.scheme} gradient has non-finite entries")
        object.__setattr__(self, "vector", vec)

    def __array__(self, dtype=None, copy=None):
        return self.vector if dtype is None else self.vector.astype(dtype)


def _check_stochastic(p_pi):
    p_pi = np.asarray(p_pi, dtype=float)
    if p_pi.ndim != 2 or p_pi.shape[0] != p_pi.shape[1]:
        raise InputError(f"expected a square matrix, got shape {p_pi.shape}")
    if (p_pi < 0).any() or np.abs(p_pi.sum(axis=1) - 1).max() > ARITH_TOL:
        raise InputError("matrix is not row-stochastic")
    return p_pi


def is_irreducible(p_pi) -> bool:
    n_comp, _ = connected_components(np.asarray(p_pi) > 0, directed=True, connection="strong")
    return n_comp == 1


def _require_irreducible(p_pi):
    p_pi = _check_stochastic(p_pi)
    if not is_irreducible(p_pi):
        raise ModelError("Markov chain is reducible; the stationary distribution is not unique")
    return p_pi


def undiscounted_stationary(p_pi) -> StateWeighting:
    """d_π solving d_π p_π = d_π with Σ d_π = 1 (null space plus a normalization row)."""
    P = _require_irreducible(p_pi)
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    d = np.linalg.solve(A, b)
    return StateWeighting(np.maximum(d, 0.0), "distribution")


def discounted_stationary(p_pi, rho, gamma: float) -> StateWeighting:
    """d_{π,γ} = (1-γ) Σ_t γ^t P(S_t = ·), via (I - γ p_πᵀ) x = (1-γ) ρ."""
    P = _check_stochastic(p_pi)
    rho = np.asarray(rho, dtype=float)
    if not 0.0 < gamma < 1.0:
        raise InputError(f"gamma must lie in (0, 1), got {gamma}")
    x = np.linalg.solve(np.eye(P.shape[0]) - gamma * P.T, (1.0 - gamma) * rho)
    assert np.isfinite(x).all(), "I - γPᵀ is nonsingular for γ < 1"
    return StateWeighting(np.maximum(x, 0.0), "distribution")


def truncated_discounted(p_pi, rho, gamma: float, horizon: int) -> np.ndarray:
    """(1-γ) Σ_{t<T} γ^t P(S_t = ·); the finite-horizon target of buffer emphasis."""
    P = np.asarray(p_pi, dtype=float)
    marg = np.asarray(rho, dtype=float).copy()
    out = np.zeros_like(marg)
    w = 1.0 - gamma
    for _ in range(horizon):
        out += w * marg
        marg = marg @ P
        w *= gamma
    return out


def value_function(mdp: TabularMdp, policy) -> np.ndarray:
    pi = as_probs_table(policy, mdp)
    P = transition_under_policy(mdp, pi)
    r_pi = (pi * mdp.reward).sum(axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P, r_pi)


def action_values(mdp: TabularMdp, policy) -> np.ndarray:
    """q_{π,γ}[s, a] from the Bellman equation q = r + γ P v."""
    v = value_function(mdp, policy)
    return mdp.reward + mdp.gamma * mdp.transition @ v


def objective(mdp: TabularMdp, policy) -> float:
    """J(π) = (1-γ) ρᵀ v_π."""
    return float((1.0 - mdp.gamma) * mdp.initial_dist @ value_function(mdp, policy))


def expected_recurrence_time(p_pi) -> np.ndarray:
    """E[τ⁺_s(s)] per state from first-passage equations, independent of d_π.

    For target s the mean hitting times h on the other states solve
    (I - P₋ₛ₋ₛ) h = 1, and the return time is 1 + Σ_{s'≠s} P[s, s'] h(s').
    """
    P = _require_irreducible(p_pi)
    n = P.shape[0]
    out = np.empty(n)
    for s in range(n):
        others = np.arange(n) != s
        if not others.any():
            out[s] = 1.0
            continue
        Q = P[np.ix_(others, others)]
        h = np.linalg.solve(np.eye(n - 1) - Q, np.ones(n - 1))
        out[s] = 1.0 + P[s, others] @ h
    return out


def averaging_correction_exact(mdp: TabularMdp, policy) -> StateWeighting:
    """c_π(s) = d_{π,γ}(s) / d_π(s)."""
    P = transition_under_policy(mdp, policy)
    d = undiscounted_stationary(P).values
    d_gamma = discounted_stationary(P, mdp.initial_dist, mdp.gamma).values
    return StateWeighting(d_gamma / d, "correction")


def _require_softmax(policy):
    if not isinstance(policy, SoftmaxPolicy):
        raise InputError("gradients need a parameterized SoftmaxPolicy")
    return policy


def _per_state_gradient(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    """(S, d): Σ_a ∇π(a|s) q(s, a) = Σ_a π(a|s) ∇log π(a|s) q(s, a)."""
    pi = policy.probs_table()
    q = action_values(mdp, policy)
    return np.einsum("sa,sad,sa->sd", pi, policy.score_table(), q)


def true_policy_gradient(mdp: TabularMdp, policy) -> GradientEstimate:
    """∇J = E_{S~d_{π,γ}}[Σ_a ∇π(a|S) q(S, a)]."""
    policy = _require_softmax(policy)
    P = transition_under_policy(mdp, policy)
    d_gamma = discounted_stationary(P, mdp.initial_dist, mdp.gamma).values
    return GradientEstimate(d_gamma @ _per_state_gradient(mdp, policy), "true_discounted")


def corrected_gradient(mdp: TabularMdp, policy, correction=None) -> GradientEstimate:
    """E_{S~d_π}[c(S) Σ_a ∇π(a|S) q(S, a)], with the exact c_π unless one is supplied."""
    policy = _require_softmax(policy)
    P = transition_under_policy(mdp, policy)
    d = undiscounted_stationary(P).values
    c = averaging_correction_exact(mdp, policy).values if correction is None else np.asarray(correction)
    return GradientEstimate((d * c) @ _per_state_gradient(mdp, policy), "averaging_corrected")


def mismatched_gradient(mdp: TabularMdp, policy) -> GradientEstimate:
    """Discounted action values weighted by the undiscounted d_π; not the gradient of any objective."""
    policy = _require_softmax(policy)
    d = undiscounted_stationary(transition_under_policy(mdp, policy)).values
    return GradientEstimate(d @ _per_state_gradient(mdp, policy), "mismatched")


def finite_difference_gradient(mdp: TabularMdp, policy: SoftmaxPolicy, h: float = 1e-5) -> np.ndarray:
    theta = policy.theta
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        grad[i] = (objective(mdp, policy.with_theta(theta + e)) - objective(mdp, policy.with_theta(theta - e))) / (2 * h)
    return grad


def tv_distance(p, q) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InputError("distributions must share a support")
    return 0.5 * float(np.abs(p - q).sum())


def max_norm_distance(p, q) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InputError("distributions must share a support")
    return float(np.abs(p - q).max())
