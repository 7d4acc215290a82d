from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgcorr.envs import two_state_mdp
from avgcorr.errors import InputError
from avgcorr.tabular import (SoftmaxPolicy, TabularMdp, as_probs_table, log_prob_grad, policy_probs,
                             random_mdp, reward_under_policy, transition_under_policy)


def test_rejects_rows_that_do_not_sum_to_one():
    P = np.full((2, 1, 2), 0.5)
    P[0, 0] = [0.5, 0.6]
    with pytest.raises(InputError):
        TabularMdp(P, np.zeros((2, 1)), 0.9, np.array([1.0, 0.0]))


def test_rejects_bad_gamma_and_shapes():
    P = np.full((2, 1, 2), 0.5)
    for gamma in (0.0, 1.0, -0.1):
        with pytest.raises(InputError):
            TabularMdp(P, np.zeros((2, 1)), gamma, np.array([1.0, 0.0]))
    with pytest.raises(InputError):
        TabularMdp(P, np.zeros((3, 1)), 0.9, np.array([1.0, 0.0]))
    with pytest.raises(InputError):
        TabularMdp(P, np.zeros((2, 1)), 0.9, np.array([0.7, 0.7]))


def test_arrays_are_read_only():
    mdp = two_state_mdp(0.9)
    with pytest.raises(ValueError):
        mdp.transition[0, 0, 0] = 0.3


def test_text_round_trip(tmp_path):
    mdp = random_mdp(np.random.default_rng(0), 4, 3, 0.7)
    path = tmp_path / "mdp.txt"
    mdp.save(path)
    back = TabularMdp.load(path)
    np.testing.assert_array_equal(back.transition, mdp.transition)
    np.testing.assert_array_equal(back.reward, mdp.reward)
    np.testing.assert_array_equal(back.initial_dist, mdp.initial_dist)
    assert back.gamma == mdp.gamma


def test_malformed_text_is_rejected():
    text = two_state_mdp().to_text()
    with pytest.raises(InputError):
        TabularMdp.from_text(text.replace("transition", "transitions"))
    with pytest.raises(InputError):
        TabularMdp.from_text("\n".join(text.splitlines()[:-1]))


def test_uniform_policy_at_zero_theta():
    pol = SoftmaxPolicy.tabular(3, 4)
    np.testing.assert_allclose(pol.probs_table(), 0.25)
    np.testing.assert_allclose(policy_probs(pol, 1), 0.25)


def test_bad_state_or_action_index():
    pol = SoftmaxPolicy.tabular(2, 2)
    with pytest.raises(InputError):
        pol.probs(2)
    with pytest.raises(InputError):
        pol.log_prob_grad(0, 5)


def test_policy_table_shape_is_checked():
    with pytest.raises(InputError):
        as_probs_table(np.full((3, 2), 0.5), two_state_mdp())


def test_rewards_and_transitions_under_policy():
    mdp = two_state_mdp(0.9)
    pi = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(transition_under_policy(mdp, pi), [[0, 1], [1, 0]])
    np.testing.assert_allclose(reward_under_policy(mdp, pi), [1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(2, 4))
def test_log_prob_gradient_matches_finite_differences(seed, n_states, n_actions):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n_states, n_actions, 3))
    pol = SoftmaxPolicy(rng.normal(size=3), feats)
    s, a = int(rng.integers(n_states)), int(rng.integers(n_actions))
    h = 1e-6
    fd = np.array([(np.log(pol.with_theta(pol.theta + h * e).probs(s)[a])
                    - np.log(pol.with_theta(pol.theta - h * e).probs(s)[a])) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(log_prob_grad(pol, s, a), fd, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_random_mdp_is_valid(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 5, 2, 0.5)
    assert (mdp.transition > 0).all()
    np.testing.assert_allclose(mdp.transition.sum(axis=2), 1.0)
