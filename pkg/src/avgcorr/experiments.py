"""Named experiments with their acceptance checks.

Each experiment is a function ``run_<name>(spec) -> dict[str, list[dict]]``
returning tidy tables (one CSV each). ``verify_<name>(tables)`` turns those
tables into ``{criterion_id: CheckResult}``. The CLI and the acceptance suite
share these functions, so the thresholds live in one place.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import oracle
from .agents import Agent, AgentConfig, train
from .envs import TabularEnv, discrete_reacher_env, two_state_env
from .errors import ConfigError
from .neural import AdvantageConfig
from .rollout import bias_ratio, bias_variance, collect, emphasis, emphasis_samples, sample_size_bound
from .tabular import SoftmaxPolicy, random_mdp, transition_under_policy

WORKERS_ENV = "AVGCORR_WORKERS"


class CheckResult(NamedTuple):
    passed: bool
    detail: str


@dataclass
class ExperimentSpec:
    name: str
    env: str | None = None
    schemes: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [0])
    overrides: dict = field(default_factory=dict)
    out: str = "results"

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.name!r}; choose from {sorted(EXPERIMENTS)}")
        if not self.seeds:
            raise ConfigError("an experiment needs at least one seed")

    def get(self, key, default):
        """Override value cast to the type of ``default``."""
        if key not in self.overrides:
            return default
        value = self.overrides[key]
        if isinstance(default, bool):
            return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
        if isinstance(default, (list, tuple)):
            if isinstance(value, str):
                items = [v for v in value.split(",") if v]
                return type(default)(type(default[0])(v) for v in items) if default else items
            return value
        return type(default)(value)


def _pool_map(fn, jobs):
    """Map over independent jobs, fanning out when ``AVGCORR_WORKERS`` > 1.

    Results come back in job order, so outputs do not depend on scheduling.
    """
    workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# counterexample ----------------------------------------------------------------------

COUNTEREXAMPLE_SCHEMES = ("uncorrected", "gamma_t", "averaging_net")
COUNTEREXAMPLE_GAMMAS = (0.3, 0.5, 0.7, 0.9)
TOP_THRESHOLD = 0.95
DRIFT_LIMIT = 0.05


def counterexample_config(scheme: str, gamma: float, seed: int, horizon: int = 10, **kw) -> AgentConfig:
    """Oracle-critic batch actor-critic on the two-state env.

    One buffer is one full episode, so every buffer visits both states equally
    often. The correction is a linear net on one-hot states whose scale makes
    its output directly comparable to ĉ.
    """
    base = dict(buffer_size=horizon, horizon=horizon, gamma=gamma, scheme=scheme, policy_kind="shared",
                critic="oracle", optimizer="sgd", lr_policy=0.95, lr_correction=0.5, correction_steps=5,
                scale=(1 - gamma) * horizon, eval_episodes=0, seed=seed)
    base.update(kw)
    return AgentConfig(**base)


def _prob_top(agent) -> dict:
    table = agent.actor.probs_table_for(agent.env)
    return {"prob_top": float(table[0, 0]), "objective": oracle.objective(agent.mdp, table)}


def _counterexample_job(job):
    scheme, gamma, seed, updates, horizon, log_every = job
    cfg = counterexample_config(scheme, gamma, seed, horizon)
    stop = None if scheme == "uncorrected" else (lambda row: row["prob_top"] >= TOP_THRESHOLD)
    curve = train("two_state", cfg, updates * horizon, eval_every=log_every * horizon, stop_when=stop,
                  diagnostics=_prob_top)
    reached = next((r["step"] // horizon for r in curve if r["prob_top"] >= TOP_THRESHOLD), -1)
    summary = dict(scheme=scheme, gamma=gamma, seed=seed, initial_prob=curve[0]["prob_top"],
                   final_prob=curve[-1]["prob_top"], updates_run=curve[-1]["step"] // horizon,
                   first_update_at_threshold=reached)
    return curve, summary


def run_counterexample(spec: ExperimentSpec) -> dict:
    schemes = spec.schemes or list(COUNTEREXAMPLE_SCHEMES)
    gammas = spec.get("gammas", list(COUNTEREXAMPLE_GAMMAS))
    if "gamma" in spec.overrides:
        gammas = [float(spec.overrides["gamma"])]
    updates = spec.get("updates", 5000)
    horizon = spec.get("horizon", 10)
    log_every = spec.get("log_every", 10)
    jobs = [(s, float(g), int(seed), updates, horizon, log_every) for s in schemes for g in gammas for seed in spec.seeds]
    results = _pool_map(_counterexample_job, jobs)
    curves = [row for curve, _ in results for row in curve]
    return {"curves": curves, "summary": [summary for _, summary in results]}


def verify_counterexample(tables, updates: int = 5000) -> dict:
    rows = tables["summary"]
    corrected = [r for r in rows if r["scheme"] in ("gamma_t", "averaging_net")]
    uncorrected = [r for r in rows if r["scheme"] == "uncorrected"]
    misses = [r for r in corrected if not 0 <= int(r["first_update_at_threshold"]) <= updates]
    drift = max((abs(float(r["final_prob"]) - float(r["initial_prob"])) for r in uncorrected), default=math.nan)
    ok = bool(corrected) and bool(uncorrected) and not misses and drift < DRIFT_LIMIT
    slowest = max((int(r["first_update_at_threshold"]) for r in corrected), default=-1)
    detail = (f"{len(corrected) - len(misses)}/{len(corrected)} corrected runs reach π(top)≥{TOP_THRESHOLD} "
              f"(slowest at update {slowest}); uncorrected max drift {drift:.3g} over {len(uncorrected)} runs")
    return {"counterexample_learning": CheckResult(ok, detail)}


# bias / variance and bias ratio ---------------------------------------------------------

def mid_training_policy(env, steps: int = 100, lr: float = 50.0) -> SoftmaxPolicy:
    """Tabular softmax policy after ``steps`` exact gradient-ascent steps from uniform.

    A deterministic stand-in for a policy checkpoint taken part-way through training.
    """
    policy = SoftmaxPolicy.tabular(env.n_states, env.n_actions)
    for _ in range(steps):
        policy = policy.with_theta(policy.theta + lr * oracle.true_policy_gradient(env.mdp, policy).vector)
    return policy


def replicate_comparison(env, policy, schemes, n_replicates: int, n_buffers: int, buffer_size: int, rng,
                         a: str = "averaging", b: str = "gamma_t"):
    """Repeat the whole ``n_buffers`` experiment and compare two schemes replicate by replicate.

    Within a replicate both schemes see the same buffers. The squared bias of a
    replicate is that of its ``n_buffers``-buffer mean emphasis, so its expected
    value includes a trace(Cov)/n_buffers term. Independent replicates give a
    paired one-sided 95% t upper bound on (a - b) for squared bias and variance.
    Returns the per-scheme table and the comparison row.
    """
    per_scheme = {s: [] for s in schemes}
    diffs = []
    for _ in range(n_replicates):
        samples, target = emphasis_samples(env, policy, schemes, n_buffers, buffer_size, rng)
        for s in schemes:
            per_scheme[s].append(bias_variance(samples[s], target))
        (ba, va), (bb, vb) = per_scheme[a][-1], per_scheme[b][-1]
        diffs.append((ba - bb, va - vb))
    diffs = np.asarray(diffs)
    mean = diffs.mean(axis=0)
    if n_replicates > 1:
        upper = mean + stats.t.ppf(0.95, n_replicates - 1) * diffs.std(axis=0, ddof=1) / math.sqrt(n_replicates)
    else:
        upper = np.full(2, np.inf)
    comparison = dict(a=a, b=b, n_replicates=n_replicates, bias_diff=float(mean[0]), var_diff=float(mean[1]),
                      bias_diff_upper=float(upper[0]), var_diff_upper=float(upper[1]),
                      replicates_a_lower_bias=int((diffs[:, 0] < 0).sum()),
                      replicates_a_lower_var=int((diffs[:, 1] < 0).sum()))
    return per_scheme, comparison


def reacher_ratio_config(seed: int, gamma: float = 0.99, **kw) -> AgentConfig:
    """Batch actor-critic with a learned correction on the discrete reacher."""
    base = dict(buffer_size=25, gamma=gamma, scheme="averaging_net", lr_policy=0.004, lr_value=0.003,
                lr_correction=0.003, correction_steps=5, advantage=AdvantageConfig("gae", 0.95), scale=143.0,
                policy_hidden=(8, 8), critic_hidden=(64, 64), seed=seed, eval_episodes=0)
    base.update(kw)
    return AgentConfig(**base)


def bias_ratio_curve(seed: int = 0, gamma: float = 0.99, checkpoints: int = 6, steps_between: int = 10_000,
                     n_buffers: int = 10, buffer_size: int = 2000, **cfg_kw) -> list[dict]:
    """Train a corrected agent and, at each checkpoint, score its frozen correction net.

    The net output f is put on the ĉ scale as (1-γ)·T·f/scale with T the episode
    horizon. Ratios of the buffer's own ĉ_D and the exact c_π are reported
    alongside for reference.
    """
    cfg = reacher_ratio_config(seed, gamma, **cfg_kw)
    env = discrete_reacher_env(gamma, seed=seed)
    probe = discrete_reacher_env(gamma, seed=seed + 7919)
    agent = Agent(env, cfg)
    rows = []
    steps = 0
    for k in range(1, checkpoints + 1):
        while steps < k * steps_between:
            agent.bac_update(collect(env, agent.actor, cfg.buffer_size))
            steps += cfg.buffer_size
        table = agent.actor.probs_table_for(env)
        c_net = (1 - gamma) * env.horizon * agent.correction_values(env.observations) / cfg.scale
        c_exact = oracle.averaging_correction_exact(env.mdp, table).values
        buffers = [collect(probe, table, buffer_size, reset=True) for _ in range(n_buffers)]
        net = bias_ratio(probe, table, buffers, c_net)
        rows.append(dict(step=steps, seed=seed, gamma=gamma, ratio_net=net.ratio, degenerate=net.degenerate,
                         ratio_buffer=bias_ratio(probe, table, buffers).ratio,
                         ratio_exact=bias_ratio(probe, table, buffers, c_exact).ratio,
                         objective=oracle.objective(env.mdp, table)))
    return rows


def run_bias_variance(spec: ExperimentSpec) -> dict:
    gamma = float(spec.overrides.get("gamma", 0.99))
    seed = int(spec.seeds[0])
    n_buffers = spec.get("n_buffers", 30)
    buffer_size = spec.get("buffer_size", 2000)
    env = discrete_reacher_env(gamma, seed=seed)
    policy = mid_training_policy(env, spec.get("policy_steps", 100))
    rng = np.random.default_rng(seed)
    schemes = ["uncorrected", "gamma_t", "averaging"]
    per_scheme, comparison = replicate_comparison(env, policy, schemes, spec.get("replicates", 20), n_buffers,
                                                  buffer_size, rng)
    summary = []
    for s in schemes:
        b, v = np.mean(per_scheme[s], axis=0)
        summary.append(dict(scheme=s, squared_bias=float(b), variance=float(v), n_buffers=n_buffers,
                            buffer_size=buffer_size, replicates=len(per_scheme[s]), gamma=gamma))
    ratio = bias_ratio_curve(seed, gamma, spec.get("checkpoints", 6), spec.get("steps_between", 10_000),
                             spec.get("ratio_buffers", 10), buffer_size)
    return {"bias_variance": summary, "comparison": [comparison],
            "bias_ratio": ratio}


def verify_bias_variance(tables) -> dict:
    out = {}
    if tables.get("comparison"):
        c = tables["comparison"][0]
        bu, vu = float(c["bias_diff_upper"]), float(c["var_diff_upper"])
        out["bias_variance_ordering"] = CheckResult(
            bu < 0 and vu < 0,
            f"averaging - gamma_t over {c.get('n_replicates', '?')} replicates: "
            f"bias² diff {float(c['bias_diff']):.3g} (95% upper {bu:.3g}), "
            f"variance diff {float(c['var_diff']):.3g} (95% upper {vu:.3g})")
    if tables.get("bias_ratio"):
        ratios = [float(r["ratio_net"]) for r in tables["bias_ratio"]]
        below = sum(r < 1 for r in ratios)
        out["bias_ratio"] = CheckResult(below >= 3, f"{below}/{len(ratios)} checkpoints below 1: "
                                        + ", ".join(f"{r:.3f}" for r in ratios))
    return out


# oracle checks -----------------------------------------------------------------------

def random_instance(rng, max_states: int = 8, max_actions: int = 4):
    """Random irreducible MDP with a random tabular softmax policy."""
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    gamma = float(rng.uniform(0.05, 0.99))
    rho = rng.dirichlet(np.ones(S))
    mdp = random_mdp(rng, S, A, gamma, rho)
    policy = SoftmaxPolicy.tabular(S, A, rng.normal(size=S * A))
    return mdp, policy


def _max_violation(values):
    return float(max(values)) if len(values) else 0.0


def oracle_suite(n: int = 100, seed: int = 0) -> list[dict]:
    """Randomized checks of the exact identities and bounds; one row per check."""
    rng = np.random.default_rng(seed)
    gradient_gap, fd_gap, recurrence_gap, bound_excess, normalization_gap, tv_excess = [], [], [], [], [], []
    for _ in range(n):
        mdp, policy = random_instance(rng)
        P = transition_under_policy(mdp, policy)
        true = oracle.true_policy_gradient(mdp, policy).vector
        gradient_gap.append(np.abs(oracle.corrected_gradient(mdp, policy).vector - true).max())
        fd_gap.append(np.abs(oracle.finite_difference_gradient(mdp, policy) - true).max())
        d = oracle.undiscounted_stationary(P).values
        d_gamma = oracle.discounted_stationary(P, mdp.initial_dist, mdp.gamma).values
        tau = oracle.expected_recurrence_time(P)
        recurrence_gap.append(np.abs(d * tau - 1).max())
        c = oracle.averaging_correction_exact(mdp, policy).values
        bound_excess.append(np.max(c - tau))
        normalization_gap.append(abs(d @ c - 1))
        tv_excess.append(oracle.tv_distance(d_gamma, d) - oracle.tv_distance(mdp.initial_dist, d))
    rows = [
        ("corrected_gradient_equals_true", gradient_gap, 1e-8),
        ("true_gradient_matches_finite_differences", fd_gap, 1e-6),
        ("stationary_times_recurrence_is_one", recurrence_gap, 1e-8),
        ("correction_below_recurrence_time", bound_excess, 1e-10),
        ("correction_normalizes_under_stationary", normalization_gap, 1e-10),
        ("tv_discounted_within_tv_initial", tv_excess, 1e-12),
    ]
    out = [dict(check=name, instances=n, max_violation=_max_violation(v), tolerance=tol,
                passed=_max_violation(v) <= tol) for name, v, tol in rows]

    mdp = two_state_env(0.9).mdp
    gap = abs(finite_horizon_correction(mdp, np.full((2, 2), 0.5), 1000)[0] - 2 / 1.9)
    out.append(dict(check="finite_horizon_correction_limit", instances=1, max_violation=gap, tolerance=1e-3,
                    passed=gap <= 1e-3))

    k, horizon = sample_size_bound(0.1, 0.1, 2, 0.9)
    out.append(dict(check="sample_size_bound_values", instances=1, max_violation=float(abs(k - 600) + abs(horizon - 29)),
                    tolerance=0.0, passed=(k, horizon) == (600, 29)))
    return out


def finite_horizon_correction(mdp, probs_table, horizon: int) -> np.ndarray:
    """c_{π,T}(s): the truncated discounted occupancy over the T-step average occupancy."""
    P = transition_under_policy(mdp, probs_table)
    num = oracle.truncated_discounted(P, mdp.initial_dist, mdp.gamma, horizon)
    occupancy = np.zeros(mdp.n_states)
    marg = np.asarray(mdp.initial_dist, dtype=float).copy()
    for _ in range(horizon):
        occupancy += marg
        marg = marg @ P
    with np.errstate(divide="ignore", invalid="ignore"):
        return num / (occupancy / horizon)


def sample_size_trials(eps: float = 0.1, delta: float = 0.1, gamma: float = 0.9, repetitions: int = 100,
                       seed: int = 0, policy=None, mdp=None) -> list[dict]:
    """Max-norm error of the averaging emphasis d̂_D·ĉ_D from buffers sized by the bound.

    Each repetition draws k trajectories of T steps on the two-state env and
    compares d̂_D·ĉ_D with d_{π,γ}. Pass ``mdp`` to use another finite MDP.
    """
    env = two_state_env(gamma, seed=seed) if mdp is None else TabularEnv(mdp.with_gamma(gamma), seed=seed)
    k, T = sample_size_bound(eps, delta, env.n_states, gamma)
    env.horizon = T
    table = np.full((env.n_states, env.n_actions), 1.0 / env.n_actions) if policy is None else policy
    target = oracle.discounted_stationary(transition_under_policy(env.mdp, table), env.mdp.initial_dist, gamma).values
    rows = []
    for rep in range(repetitions):
        buf = collect(env, table, k * T, reset=True)
        e = emphasis(buf, gamma, "averaging", env.n_states)
        err = oracle.max_norm_distance(e, target)
        rows.append(dict(repetition=rep, k=k, T=T, max_norm_error=err, within_eps=err <= eps))
    return rows


def run_oracle_checks(spec: ExperimentSpec) -> dict:
    seed = int(spec.seeds[0])
    return {"oracle_checks": oracle_suite(spec.get("instances", 100), seed),
            "sample_size": sample_size_trials(repetitions=spec.get("repetitions", 100), seed=seed)}


def verify_oracle_checks(tables) -> dict:
    out = {}
    for row in tables.get("oracle_checks", []):
        passed = str(row["passed"]) in ("True", "true", "1")
        out[str(row["check"])] = CheckResult(passed, f"max violation {float(row['max_violation']):.3g} "
                                             f"(tolerance {float(row['tolerance']):.0e})")
    trials = tables.get("sample_size", [])
    if trials:
        hits = sum(str(r["within_eps"]) in ("True", "true", "1") for r in trials)
        out["sample_size_bound_guarantee"] = CheckResult(
            hits >= math.ceil(0.9 * len(trials)), f"{hits}/{len(trials)} repetitions within ε")
    return out


# cart-pole ---------------------------------------------------------------------------

def cartpole_config(scheme: str, seed: int, **kw) -> AgentConfig:
    """Batch actor-critic on cart-pole.

    All schemes share the uncorrected agent's tuned settings; the corrected
    agent adds a separate one-step correction net and a faster policy step.
    """
    base = dict(buffer_size=64, gamma=0.995, lr_policy=0.0008, lr_value=0.0008, critic_loss_weight=8.8,
                critic_hidden=(128, 128), policy_hidden=(32, 32), scheme=scheme, seed=seed)
    if scheme == "averaging_net":
        base.update(scale=29.0, shared_correction=False, lr_correction=0.003, correction_steps=1, lr_policy=0.0015)
    base.update(kw)
    return AgentConfig(**base)


def _cartpole_job(job):
    scheme, seed, steps, eval_every = job
    return train("cartpole", cartpole_config(scheme, seed), steps, eval_every=eval_every)


def run_cartpole(spec: ExperimentSpec) -> dict:
    schemes = spec.schemes or ["uncorrected", "averaging_net"]
    steps = spec.get("steps", 100_000)
    eval_every = spec.get("eval_every", 10_000)
    jobs = [(s, int(seed), steps, eval_every) for s in schemes for seed in spec.seeds]
    curves = _pool_map(_cartpole_job, jobs)
    summary = [dict(scheme=s, seed=seed, final_return=c[-1]["undiscounted_return"], steps=c[-1]["step"])
               for (s, seed, _, _), c in zip(jobs, curves)]
    return {"curves": [row for c in curves for row in c], "summary": summary}


def pooled_standard_error(a, b) -> float:
    """Standard error of the difference of two independent sample means."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b)))


def verify_cartpole(tables) -> dict:
    rows = tables["summary"]
    avg = [float(r["final_return"]) for r in rows if r["scheme"] == "averaging_net"]
    unc = [float(r["final_return"]) for r in rows if r["scheme"] == "uncorrected"]
    if len(avg) < 2 or len(unc) < 2:
        return {"cartpole_noninferiority": CheckResult(False, "need at least two seeds per scheme")}
    se = pooled_standard_error(avg, unc)
    ok = np.mean(avg) >= np.mean(unc) - se
    return {"cartpole_noninferiority": CheckResult(bool(ok), f"averaging {np.mean(avg):.1f} vs uncorrected "
                                                   f"{np.mean(unc):.1f}, pooled SE {se:.1f}, {len(avg)} seeds")}


# registry ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Experiment:
    run: object
    verify: object
    anchor: str  # what result this experiment reproduces


EXPERIMENTS = {
    "counterexample": Experiment(run_counterexample, verify_counterexample,
                                 "two-state aliasing counterexample: learned π(top) per scheme and discount"),
    "bias_variance": Experiment(run_bias_variance, verify_bias_variance,
                                "discrete reacher: emphasis bias/variance per scheme and learned-correction bias ratio"),
    "oracle_checks": Experiment(run_oracle_checks, verify_oracle_checks,
                                "exact identities and bounds on random MDPs; sample-size bound trials"),
    "cartpole": Experiment(run_cartpole, verify_cartpole,
                           "cart-pole batch actor-critic, corrected vs uncorrected final return"),
}
