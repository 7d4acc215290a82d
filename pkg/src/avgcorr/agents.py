"""Batch actor-critic and PPO under four state-weighting schemes.

* ``uncorrected``: every sample weighs 1 (states follow the sampling distribution).
* ``gamma_t``: sample i weighs T(1-γ)γ^{t_i}.
* ``averaging_net``: sample i weighs the learned correction f_σ(S_i).
* ``averaging_oracle``: sample i weighs the exact c_π(S_i) (tabular envs only).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from . import oracle
from .envs import make_env
from .errors import ConfigError, DivergenceError, InputError
from .neural import (AdvantageConfig, Mlp, advantages, correction_loss, make_optimizer, regression_loss,
                     value_loss)
from .rollout import Buffer, collect
from .tabular import SoftmaxPolicy, transition_under_policy


class WeightingScheme(str, Enum):
    UNCORRECTED = "uncorrected"
    GAMMA_T = "gamma_t"
    AVERAGING_NET = "averaging_net"
    AVERAGING_ORACLE = "averaging_oracle"


def _softmax(z):
    z = np.exp(z - z.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


class LinearSoftmaxActor:
    """Softmax over φ(s, a)·θ indexed by tabular state id."""

    input_kind = "state"

    def __init__(self, features, theta=None):
        self.features = np.asarray(features, dtype=float)
        self.params = np.zeros(self.features.shape[2]) if theta is None else np.array(theta, dtype=float)

    @property
    def n_actions(self) -> int:
        return self.features.shape[1]

    def inputs(self, buffer) -> np.ndarray:
        return buffer.state

    def probs(self, x) -> np.ndarray:
        return _softmax(self.features[np.asarray(x)] @ self.params)

    def probs_table_for(self, env) -> np.ndarray:
        return self.probs(np.arange(self.features.shape[0]))

    def log_prob(self, x, actions) -> np.ndarray:
        p = self.probs(x)
        return np.log(p[np.arange(len(actions)), actions])

    def grad_log_prob(self, x, actions, coef) -> np.ndarray:
        """Σ_i coef_i ∇ log π(a_i | x_i)."""
        phi = self.features[np.asarray(x)]
        p = _softmax(phi @ self.params)
        score = phi[np.arange(len(actions)), actions] - np.einsum("na,nad->nd", p, phi)
        return np.asarray(coef, dtype=float) @ score

    def grad_all_actions(self, x, coef_sa) -> np.ndarray:
        """Σ_i Σ_a coef_{ia} ∇π(a | x_i)."""
        phi = self.features[np.asarray(x)]
        p = _softmax(phi @ self.params)
        g = p * (coef_sa - (p * coef_sa).sum(axis=1, keepdims=True))
        return np.einsum("na,nad->d", g, phi)

    def as_policy(self) -> SoftmaxPolicy:
        return SoftmaxPolicy(self.params.copy(), self.features)


class MlpActor:
    """Categorical policy with MLP logits over observations."""

    input_kind = "obs"

    def __init__(self, net: Mlp):
        self.net = net

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    @property
    def n_actions(self) -> int:
        return self.net.n_out

    def inputs(self, buffer) -> np.ndarray:
        return buffer.obs

    def probs(self, x) -> np.ndarray:
        return _softmax(self.net.forward(x))

    def probs_table_for(self, env) -> np.ndarray:
        return self.probs(env.observations)

    def log_prob(self, x, actions) -> np.ndarray:
        z = self.net.forward(x)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return logp[np.arange(len(actions)), actions]

    def grad_log_prob(self, x, actions, coef) -> np.ndarray:
        z, acts = self.net.forward_cache(x)
        p = _softmax(z)
        g = -p * np.asarray(coef, dtype=float)[:, None]
        g[np.arange(len(actions)), actions] += coef
        return self.net.backward(acts, g)[0]

    def grad_all_actions(self, x, coef_sa) -> np.ndarray:
        z, acts = self.net.forward_cache(x)
        p = _softmax(z)
        g = p * (coef_sa - (p * coef_sa).sum(axis=1, keepdims=True))
        return self.net.backward(acts, g)[0]


@dataclass(frozen=True)
class AgentConfig:
    """Hyperparameters for one run. Defaults follow the tuned CartPole BAC values."""

    buffer_size: int = 64
    lr_correction: float = 0.003
    lr_policy: float = 0.0008
    lr_value: float = 0.0008
    correction_steps: int = 10
    scheme: WeightingScheme = WeightingScheme.UNCORRECTED
    gamma: float = 0.995
    clip_eps: float = 0.2
    target_kl: float = 0.01
    scale: float = 29.0
    advantage: AdvantageConfig = field(default_factory=AdvantageConfig)
    seed: int = 0
    optimizer: str = "adam"
    policy_hidden: tuple = (32, 32)
    critic_hidden: tuple = (64, 64)
    critic: str = "net"                # "net" or "oracle" (true q-values, tabular only)
    policy_kind: str = "mlp"           # "mlp", "tabular" or "shared" (two-state aliasing)
    shared_correction: bool = True     # correction head on the critic's hidden layers
    value_steps: int = 1
    critic_loss_weight: float = 1.0
    normalize_advantages: bool = False
    ppo_epochs: int = 80
    value_epochs: int = 80
    horizon: int = 0                   # episode timeout; 0 keeps the env default
    eval_episodes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "scheme", WeightingScheme(self.scheme))
        for name in ("lr_correction", "lr_policy", "lr_value"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.clip_eps < 1:
            raise ConfigError("clip_eps must lie in (0, 1)")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.buffer_size < 1 or self.correction_steps < 0:
            raise ConfigError("buffer_size >= 1 and correction_steps >= 0 required")
        if self.critic not in ("net", "oracle"):
            raise ConfigError(f"critic must be 'net' or 'oracle', got {self.critic!r}")
        if self.policy_kind not in ("mlp", "tabular", "shared"):
            raise ConfigError(f"unknown policy_kind {self.policy_kind!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        d["advantage"] = f"{self.advantage.mode}:{self.advantage.lam}"
        return d


class Agent:
    """Actor, critic, correction network and their optimizers for one run."""

    def __init__(self, env, cfg: AgentConfig, rng=None):
        self.cfg = cfg
        self.env = env
        self.mdp = getattr(env, "mdp", None)
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        tabular = self.mdp is not None
        if cfg.scheme is WeightingScheme.AVERAGING_ORACLE and not tabular:
            raise ConfigError("averaging_oracle needs a tabular environment")
        if cfg.critic == "oracle" and not tabular:
            raise ConfigError("the oracle critic needs a tabular environment")

        if cfg.policy_kind == "mlp":
            self.actor = MlpActor(Mlp((env.obs_dim, *cfg.policy_hidden, env.n_actions), rng, out_scale=0.01))
        elif not tabular:
            raise ConfigError(f"policy_kind {cfg.policy_kind!r} needs a tabular environment")
        elif cfg.policy_kind == "shared":
            from .envs import two_state_features

            if env.n_states != 2:
                raise ConfigError("shared features are defined for the two-state environment")
            self.actor = LinearSoftmaxActor(two_state_features())
        else:
            S, A = env.n_states, env.n_actions
            self.actor = LinearSoftmaxActor(np.eye(S * A).reshape(S, A, S * A))

        self.critic = None
        self.correction = None
        self.correction_head = 0
        uses_net = cfg.scheme is WeightingScheme.AVERAGING_NET
        if cfg.critic == "net":
            n_out = 2 if uses_net and cfg.shared_correction else 1
            self.critic = Mlp((env.obs_dim, *cfg.critic_hidden, n_out), rng)
            if n_out == 2:
                self.correction, self.correction_head = self.critic, 1
        if uses_net and self.correction is None:
            hidden = () if cfg.critic == "oracle" else cfg.critic_hidden
            self.correction = Mlp((env.obs_dim, *hidden, 1), rng if hidden else None)

        opt = cfg.optimizer
        self.policy_opt = make_optimizer(opt, self.actor.params.size, cfg.lr_policy)
        self.value_opt = make_optimizer(opt, self.critic.n_params, cfg.lr_value) if self.critic else None
        self.correction_opt = (make_optimizer(opt, self.correction.n_params, cfg.lr_correction)
                               if self.correction else None)
        self.horizon = cfg.horizon or getattr(env, "horizon", 0)
        self.seen_generations: set[int] = set()
        self.updates = 0
        self.last_correction_loss = float("nan")

    # weights --------------------------------------------------------------------

    def correction_values(self, obs) -> np.ndarray:
        return self.correction.forward(obs)[:, self.correction_head]

    def _nominal_T(self, buffer) -> float:
        return float(self.horizon) if self.horizon > 0 else buffer.nominal_horizon

    def weights(self, buffer: Buffer) -> np.ndarray:
        cfg = self.cfg
        if cfg.scheme is WeightingScheme.UNCORRECTED:
            return np.ones(len(buffer))
        if cfg.scheme is WeightingScheme.GAMMA_T:
            return self._nominal_T(buffer) * (1 - cfg.gamma) * np.power(cfg.gamma, buffer.t.astype(float))
        if cfg.scheme is WeightingScheme.AVERAGING_NET:
            return self.correction_values(buffer.obs)
        table = self.actor.probs_table_for(self.env)
        return oracle.averaging_correction_exact(self.mdp, table).values[buffer.state]

    def weight_to_correction(self, buffer) -> float:
        """Factor that puts this scheme's raw weights on the c_π scale."""
        if self.cfg.scheme is WeightingScheme.AVERAGING_NET:
            return (1 - self.cfg.gamma) * self._nominal_T(buffer) / self.cfg.scale
        return 1.0

    def fit_correction(self, buffer: Buffer) -> float:
        loss = float("nan")
        for _ in range(self.cfg.correction_steps):
            loss, g = correction_loss(self.correction, buffer, self.cfg.gamma, self.cfg.scale, self.correction_head)
            self.correction_opt.step(self.correction.params, g)
        self.last_correction_loss = loss
        return loss

    def _oracle_q(self) -> np.ndarray:
        table = self.actor.probs_table_for(self.env)
        return oracle.action_values(self.mdp, table)

    def _claim(self, buffer):
        if buffer.generation in self.seen_generations:
            raise InputError("buffer already consumed; on-policy updates use fresh data")
        self.seen_generations.add(buffer.generation)

    def _check_finite(self):
        for arr in (self.actor.params, getattr(self.critic, "params", None), getattr(self.correction, "params", None)):
            if arr is not None and not np.isfinite(arr).all():
                raise DivergenceError(f"non-finite parameters after update {self.updates}")

    # updates --------------------------------------------------------------------

    def policy_gradient(self, buffer: Buffer, weights: np.ndarray) -> np.ndarray:
        """(1/|D|) Σ w_i ∇log π(A_i|S_i) H_i, or its all-actions form with true q-values."""
        x = self.actor.inputs(buffer)
        n = len(buffer)
        if self.cfg.critic == "oracle":
            q = self._oracle_q()[buffer.state]
            return self.actor.grad_all_actions(x, weights[:, None] * q) / n
        adv = advantages(self.critic, buffer, self.cfg.gamma, self.cfg.advantage)
        if self.cfg.normalize_advantages and n > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        return self.actor.grad_log_prob(x, buffer.action, weights * adv) / n

    def fit_value(self, buffer: Buffer, steps: int) -> float:
        loss = float("nan")
        for _ in range(steps):
            loss, g = value_loss(self.critic, buffer, self.cfg.gamma)
            self.value_opt.step(self.critic.params, self.cfg.critic_loss_weight * g)
        return loss

    def bac_update(self, buffer: Buffer) -> dict:
        """Correction fit (M steps), then one policy ascent step, then the value step."""
        self._claim(buffer)
        if self.correction is not None:
            self.fit_correction(buffer)
        w = self.weights(buffer)
        grad = self.policy_gradient(buffer, w)
        self.policy_opt.step(self.actor.params, -grad)
        if self.critic is not None:
            self.fit_value(buffer, self.cfg.value_steps)
        self.updates += 1
        self._check_finite()
        return {"weights": w, "grad": grad}

    def ppo_update(self, buffer: Buffer) -> dict:
        """Weighted clipped-surrogate epochs with KL early stopping, then value regression on λ-returns."""
        self._claim(buffer)
        cfg = self.cfg
        if self.correction is not None:
            self.fit_correction(buffer)
        w = self.weights(buffer)
        x = self.actor.inputs(buffer)
        if cfg.critic == "oracle":
            q = self._oracle_q()
            v = (self.actor.probs_table_for(self.env) * q).sum(axis=1)
            adv = q[buffer.state, buffer.action] - v[buffer.state]
            returns = None
        else:
            gae_cfg = cfg.advantage if cfg.advantage.mode == "gae" else AdvantageConfig("gae", cfg.advantage.lam)
            adv = advantages(self.critic, buffer, cfg.gamma, gae_cfg)
            returns = adv + self.critic.forward(buffer.obs)[:, 0]
        if cfg.normalize_advantages and len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        logp_old = self.actor.log_prob(x, buffer.action)
        epochs = 0
        kl = 0.0
        for _ in range(cfg.ppo_epochs):
            logp = self.actor.log_prob(x, buffer.action)
            kl = float(np.mean(logp_old - logp))
            if kl > cfg.target_kl:
                break
            _, grad = ppo_surrogate(self.actor, x, buffer.action, logp_old, adv, w, cfg.clip_eps, logp=logp)
            self.policy_opt.step(self.actor.params, -grad)
            epochs += 1
        if self.critic is not None:
            for _ in range(cfg.value_epochs):
                _, g = regression_loss(self.critic, buffer.obs, returns, head=0)
                self.value_opt.step(self.critic.params, cfg.critic_loss_weight * g)
        self.updates += 1
        self._check_finite()
        return {"weights": w, "epochs": epochs, "kl": kl}


def ppo_surrogate(actor, x, actions, logp_old, adv, weights, clip_eps, logp=None):
    """(1/|D|) Σ w_i min(e_i H_i, clip(e_i, 1-ε, 1+ε) H_i) and its gradient.

    The gradient flows only through samples whose unclipped term is the minimum.
    """
    if logp is None:
        logp = actor.log_prob(x, actions)
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1 - clip_eps, 1 + clip_eps)
    unclipped_term = ratio * adv
    clipped_term = clipped * adv
    n = len(actions)
    value = float(np.mean(weights * np.minimum(unclipped_term, clipped_term)))
    active = unclipped_term <= clipped_term
    coef = np.where(active, weights * adv * ratio, 0.0) / n
    return value, actor.grad_log_prob(x, actions, coef)


def bac_update(agent: Agent, buffer: Buffer) -> dict:
    return agent.bac_update(buffer)


def ppo_update(agent: Agent, buffer: Buffer) -> dict:
    return agent.ppo_update(buffer)


# training ---------------------------------------------------------------------------

def evaluate(agent: Agent, env, episodes: int) -> tuple[float, float]:
    """Mean undiscounted and discounted return of ``episodes`` fresh episodes under the
    current stochastic policy (no learning)."""
    env.reset()
    undiscounted, discounted = [], []
    ret = dret = 0.0
    gamma = agent.cfg.gamma
    chunk = max(64, agent.horizon or 64)
    while len(undiscounted) < episodes:
        buf = collect(env, agent.actor, chunk)
        for i in range(len(buf)):
            ret += buf.reward[i]
            dret += gamma ** buf.t[i] * buf.reward[i]
            if buf.terminal[i] or buf.timeout[i]:
                undiscounted.append(ret)
                discounted.append(dret)
                ret = dret = 0.0
                if len(undiscounted) == episodes:
                    break
    return float(np.mean(undiscounted)), float(np.mean(discounted))


def emphasis_bias(agent: Agent, buffer: Buffer, weights: np.ndarray) -> float:
    """Squared distance between this update's state emphasis and d_{π,γ} (tabular only)."""
    mdp = agent.mdp
    S = mdp.n_states
    emph = np.bincount(buffer.state, weights=weights * agent.weight_to_correction(buffer), minlength=S) / len(buffer)
    table = agent.actor.probs_table_for(agent.env)
    target = oracle.discounted_stationary(transition_under_policy(mdp, table), mdp.initial_dist, mdp.gamma).values
    return float(((emph - target) ** 2).sum())


CURVE_COLUMNS = ("step", "seed", "scheme", "env", "gamma", "undiscounted_return", "discounted_return",
                 "emphasis_bias", "correction_loss")


def train(env, cfg: AgentConfig, total_steps: int, algo: str = "bac", eval_every: int | None = None,
          stop_when=None, diagnostics=None) -> list[dict]:
    """Run ``algo`` for ``total_steps`` environment steps and return the learning curve.

    ``env`` is an env name or instance. A row is logged every ``eval_every``
    steps (default: every update) with returns from separate evaluation episodes.
    ``stop_when(row)`` may end the run early; ``diagnostics(agent)`` adds columns.
    """
    if algo not in ("bac", "ppo"):
        raise ConfigError(f"unknown algorithm {algo!r}")
    env_name = env if isinstance(env, str) else env.name
    if isinstance(env, str):
        env = make_env(env, seed=cfg.seed, gamma=cfg.gamma, horizon=cfg.horizon or None)
    eval_env = make_env(env_name, seed=cfg.seed + 100_003, gamma=cfg.gamma, horizon=cfg.horizon or None)
    agent = Agent(env, cfg)
    update = agent.bac_update if algo == "bac" else agent.ppo_update
    eval_every = eval_every or cfg.buffer_size
    curve: list[dict] = []
    steps = 0
    next_eval = 0
    tabular = agent.mdp is not None

    def log(info):
        und, disc = evaluate(agent, eval_env, cfg.eval_episodes) if cfg.eval_episodes else (math.nan, math.nan)
        row = dict(step=steps, seed=cfg.seed, scheme=cfg.scheme.value, env=env_name, gamma=cfg.gamma,
                   undiscounted_return=und, discounted_return=disc,
                   emphasis_bias=emphasis_bias(agent, info["buffer"], info["weights"]) if tabular and info else math.nan,
                   correction_loss=agent.last_correction_loss)
        if diagnostics is not None:
            row.update(diagnostics(agent))
        curve.append(row)
        return row

    row = log(None)
    next_eval = eval_every
    while steps < total_steps:
        buffer = collect(env, agent.actor, cfg.buffer_size)
        steps += len(buffer)
        try:
            info = update(buffer)
        except DivergenceError as exc:
            raise DivergenceError(str(exc), curve) from None
        info["buffer"] = buffer
        if steps >= next_eval or steps >= total_steps:
            row = log(info)
            next_eval += eval_every
            if stop_when is not None and stop_when(row):
                break
    return curve


def with_overrides(cfg: AgentConfig, **kw) -> AgentConfig:
    return replace(cfg, **kw)
