from __future__ import annotations

import math

import numpy as np
import pytest

from avgcorr import oracle
from avgcorr.envs import (CENTER, CartPoleEnv, discrete_reacher_env, discrete_reacher_mdp, make_env, reacher_state,
                          two_state_env)
from avgcorr.errors import InputError
from avgcorr.rollout import collect
from avgcorr.tabular import transition_under_policy


def test_two_state_swaps_and_pays_by_action():
    env = two_state_env(0.9, seed=0)
    assert env.state == 0
    step = env.step(0)
    assert step.reward == 1.0 and env.state == 1
    step = env.step(0)
    assert step.reward == -1.0 and env.state == 0


def test_timeout_resets_and_reports_true_successor():
    env = two_state_env(0.9, horizon=3, seed=0)
    steps = [env.step(1) for _ in range(3)]
    assert [s.timeout for s in steps] == [False, False, True]
    np.testing.assert_array_equal(steps[-1].next_state, [0.0, 1.0])
    assert env.state == 0 and env.t == 0


def test_bad_action_rejected():
    with pytest.raises(InputError):
        two_state_env().step(2)
    with pytest.raises(InputError):
        CartPoleEnv(seed=0).step(3)
    with pytest.raises(InputError):
        make_env("pendulum")


def test_reacher_moves_clamp_at_walls():
    mdp = discrete_reacher_mdp()
    corner = reacher_state(0, 0)
    north, south_west = 0, 5
    assert mdp.transition[corner, south_west, corner] == 1.0
    assert mdp.transition[corner, north, reacher_state(0, 1)] == 1.0
    assert mdp.transition[reacher_state(8, 3), 1, reacher_state(8, 4)] == 1.0  # NE at the east wall


def test_reacher_center_pays_zero_and_relocates_uniformly():
    mdp = discrete_reacher_mdp()
    c = reacher_state(*CENTER)
    np.testing.assert_array_equal(mdp.reward[c], 0.0)
    assert (np.delete(mdp.reward, c, axis=0) == -1.0).all()
    np.testing.assert_allclose(mdp.transition[c], 1 / 81)


def test_reacher_chain_is_irreducible_under_uniform_policy():
    P = transition_under_policy(discrete_reacher_mdp(), np.full((81, 8), 1 / 8))
    assert oracle.is_irreducible(P)


def test_reacher_visit_frequencies_match_oracle_occupancy():
    """Mean visit frequency over independent runs sits inside 3σ of the exact occupancy."""
    env = discrete_reacher_env(0.99, horizon=500, seed=11)
    pi = np.full((81, 8), 1 / 8)
    P = transition_under_policy(env.mdp, pi)
    occupancy = np.zeros(81)
    marg = env.mdp.initial_dist.copy()
    for _ in range(500):
        occupancy += marg
        marg = marg @ P
    occupancy /= 500
    runs = np.array([np.bincount(collect(env, pi, 1000, reset=True).state, minlength=81) / 1000 for _ in range(200)])
    se = runs.std(axis=0, ddof=1) / math.sqrt(len(runs))
    assert (np.abs(runs.mean(axis=0) - occupancy) <= 3 * se + 1e-3).mean() >= 0.97


@pytest.mark.slow
def test_reacher_discounted_weighting_matches_oracle():
    """(1-γ)Σ_t γ^t 1[S_t = s] averaged over 10^5 episodes sits within 1e-2 of d_{π,γ}."""
    env = discrete_reacher_env(0.99, seed=3)
    pi = np.full((81, 8), 1 / 8)
    P = transition_under_policy(env.mdp, pi)
    target = oracle.discounted_stationary(P, env.mdp.initial_dist, 0.99).values
    acc = np.zeros(81)
    for _ in range(100):
        buf = collect(env, pi, 1000 * env.horizon, reset=True)
        acc += np.bincount(buf.state, weights=(1 - 0.99) * 0.99 ** buf.t, minlength=81)
    assert np.abs(acc / 1e5 - target).max() < 1e-2


def test_cartpole_dynamics_single_step():
    s = np.array([0.01, -0.02, 0.03, 0.04])
    force = 10.0
    total, pml = 1.1, 0.05
    temp = (force + pml * s[3] ** 2 * math.sin(s[2])) / total
    thacc = (9.8 * math.sin(s[2]) - math.cos(s[2]) * temp) / (0.5 * (4 / 3 - 0.1 * math.cos(s[2]) ** 2 / total))
    xacc = temp - pml * thacc * math.cos(s[2]) / total
    expected = [s[0] + 0.02 * s[1], s[1] + 0.02 * xacc, s[2] + 0.02 * s[3], s[3] + 0.02 * thacc]
    np.testing.assert_allclose(CartPoleEnv.dynamics(s, force), expected, rtol=1e-12)


def test_cartpole_failure_bounds():
    assert CartPoleEnv.failed(np.array([2.5, 0, 0, 0]))
    assert CartPoleEnv.failed(np.array([0, 0, 0.21, 0]))
    assert not CartPoleEnv.failed(np.array([2.3, 0, 0.2, 0]))


def test_cartpole_terminates_and_resets():
    env = CartPoleEnv(seed=0)
    assert (np.abs(env.obs) <= 0.05).all()
    for n in range(1, 200):
        step = env.step(1)
        if step.terminal:
            break
    assert step.terminal and not step.timeout and n < 200
    assert env.t == 0 and (np.abs(env.obs) <= 0.05).all()


def test_cartpole_times_out_at_horizon():
    env = CartPoleEnv(horizon=5, seed=0)
    env.state = np.zeros(4)
    steps = [env.step(i % 2) for i in range(5)]
    assert steps[-1].timeout and not any(s.timeout for s in steps[:-1])
