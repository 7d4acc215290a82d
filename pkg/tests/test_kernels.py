"""The compiled kernels must agree with their Python twins on identical uniforms."""
from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from avgcorr import _kernels_py
from avgcorr.envs import discrete_reacher_mdp, two_state_mdp
from avgcorr.neural import Mlp

_kernels = pytest.importorskip("avgcorr._kernels", reason="compiled extension not built")


def _cum(p):
    c = np.cumsum(p, axis=-1)
    c[..., -1] = 1.0
    return c


def _assert_same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        if isinstance(x, np.ndarray):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
        else:
            assert x == pytest.approx(y, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("make_mdp,horizon", [(two_state_mdp, 7), (discrete_reacher_mdp, 50), (discrete_reacher_mdp, 0)])
def test_simulate_tabular_agrees(make_mdp, horizon):
    rng = np.random.default_rng(1)
    mdp = make_mdp()
    pi = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
    args = (_cum(mdp.transition), _cum(pi), _cum(mdp.initial_dist), np.ascontiguousarray(mdp.reward), 0, 0,
            horizon, rng.random((2000, 3)))
    _assert_same(_kernels.simulate_tabular(*args), _kernels_py.simulate_tabular(*args))


def test_gae_agrees():
    rng = np.random.default_rng(2)
    n = 3000
    rewards, values, next_values = rng.normal(size=(3, n))
    terminal = rng.random(n) < 0.05
    cut = terminal | (rng.random(n) < 0.02)
    cut[-1] = True
    for lam in (0.0, 0.5, 0.95, 1.0):
        np.testing.assert_allclose(_kernels.gae(rewards, values, next_values, terminal, cut, 0.99, lam),
                                   _kernels_py.gae(rewards, values, next_values, terminal, cut, 0.99, lam),
                                   rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("hidden", [(), (8,), (16, 16)])
def test_cartpole_rollout_agrees(hidden):
    rng = np.random.default_rng(3)
    net = Mlp((4, *hidden, 2), rng)
    state = rng.uniform(-0.05, 0.05, 4)
    u = rng.random((1500, 5))
    _assert_same(_kernels.cartpole_rollout(net.params, list(net.sizes), state, 0, 200, u),
                 _kernels_py.cartpole_rollout(net.params, list(net.sizes), state, 0, 200, u))


def _backend(env_value):
    env = dict(os.environ)
    env.pop("AVGCORR_PURE_PYTHON", None)
    if env_value is not None:
        env["AVGCORR_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", "from avgcorr.kernels import BACKEND; print(BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_backend_selection_at_import():
    assert _backend(None) == "cython"
    assert _backend("1") == "python"
