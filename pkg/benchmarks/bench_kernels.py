"""Time the compiled kernels against their pure-Python twins.

    python benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from avgcorr import _kernels_py
from avgcorr.envs import discrete_reacher_mdp
from avgcorr.neural import Mlp

try:
    from avgcorr import _kernels
except ImportError:
    _kernels = None


def _cum(p):
    c = np.cumsum(p, axis=-1)
    c[..., -1] = 1.0
    return c


def cases(rng):
    mdp = discrete_reacher_mdp(0.99)
    cum_p = _cum(mdp.transition)
    cum_pi = _cum(np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions))
    cum_rho = _cum(mdp.initial_dist)
    u3 = rng.random((20_000, 3))
    n = 20_000
    rewards, values, next_values = rng.normal(size=(3, n))
    terminal = rng.random(n) < 0.01
    cut = terminal | (rng.random(n) < 0.002)
    net = Mlp((4, 32, 32, 2), rng, out_scale=0.01)
    u5 = rng.random((5_000, 5))
    return {
        "simulate_tabular (20k reacher steps)":
            lambda k: k.simulate_tabular(cum_p, cum_pi, cum_rho, mdp.reward, 0, 0, 500, u3),
        "gae (20k transitions)":
            lambda k: k.gae(rewards, values, next_values, terminal, cut, 0.99, 0.95),
        "cartpole_rollout (5k steps, 32x32 policy)":
            lambda k: k.cartpole_rollout(net.params, list(net.sizes), np.zeros(4), 0, 500, u5),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = [("python", _kernels_py)] + ([("cython", _kernels)] if _kernels is not None else [])
    print(f"{'kernel':44s}" + "".join(f"{name:>12s}" for name, _ in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, fn in cases(rng).items():
        times = [min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) for _, mod in backends]
        line = f"{label:44s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            line += f"{times[0] / times[1]:11.1f}x"
        print(line)
    if _kernels is None:
        print("compiled extension not built; only the Python backend was timed")


if __name__ == "__main__":
    main()
