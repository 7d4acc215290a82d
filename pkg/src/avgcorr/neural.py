"""Small tanh MLPs with hand-written backprop, plus the losses and advantage
estimators used by the agents."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, InputError


class Mlp:
    """Fully connected net: tanh on hidden layers, linear output.

    Parameters live in one flat vector (per layer: W row-major with shape
    (n_in, n_out), then b); the layer arrays are views into it.
    """

    def __init__(self, sizes, rng=None, params=None, out_scale: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise InputError("an MLP needs at least input and output sizes")
        n = sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))
        self.params = np.zeros(n)
        self._bind()
        if params is not None:
            self.set_params(params)
        elif rng is not None:
            for i, (W, _) in enumerate(self.layers):
                W[:] = rng.normal(scale=1.0 / np.sqrt(W.shape[0]), size=W.shape)
                if i == len(self.layers) - 1:
                    W *= out_scale

    def _bind(self):
        self.layers = []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = self.params[off:off + a * b].reshape(a, b)
            off += a * b
            self.layers.append((W, self.params[off:off + b]))
            off += b

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def set_params(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != self.params.shape:
            raise InputError(f"expected {self.params.shape} parameters, got {vec.shape}")
        self.params[:] = vec

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, params=self.params.copy())

    def forward(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        if h.shape[-1] != self.n_in:
            raise InputError(f"input dimension {h.shape[-1]} != {self.n_in}")
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
        return h

    def forward_cache(self, x):
        h = np.atleast_2d(np.asarray(x, dtype=float))
        acts = [h]
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out):
        """Gradient of Σ grad_out ⊙ output w.r.t. parameters (flat) and inputs."""
        grad = np.empty_like(self.params)
        g = np.asarray(grad_out, dtype=float)
        off = self.params.size
        for i in range(len(self.layers) - 1, -1, -1):
            W, b = self.layers[i]
            if i < len(self.layers) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            nb = b.size
            grad[off - nb:off] = g.sum(axis=0)
            off -= nb
            grad[off - W.size:off] = (acts[i].T @ g).ravel()
            off -= W.size
            g = g @ W.T
        return grad, g

    def jacobian_vector(self, x, grad_out):
        """Convenience wrapper: forward then backward for a single batch."""
        _, acts = self.forward_cache(x)
        return self.backward(acts, grad_out)

    # checkpoints ---------------------------------------------------------------

    def save(self, path) -> None:
        header = "# sizes: " + ",".join(map(str, self.sizes))
        Path(path).write_text(header + "\n" + "\n".join(repr(float(v)) for v in self.params) + "\n")

    @classmethod
    def load(cls, path) -> "Mlp":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("# sizes:"):
            raise InputError("checkpoint is missing its layer-shape header")
        sizes = [int(s) for s in lines[0].split(":", 1)[1].split(",")]
        return cls(sizes, params=np.array([float(v) for v in lines[1:] if v.strip()]))


class Adam:
    def __init__(self, n: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.k = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """In-place descent step on ``params``."""
        self.k += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.k)
        v_hat = self.v / (1 - self.b2 ** self.k)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Sgd:
    def __init__(self, n: int, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad


def make_optimizer(kind: str, n: int, lr: float):
    if kind == "adam":
        return Adam(n, lr)
    if kind == "sgd":
        return Sgd(n, lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


def correction_targets(t, gamma: float, scale: float) -> np.ndarray:
    return scale * np.power(gamma, np.asarray(t, dtype=float))


def correction_loss(net: Mlp, buffer, gamma: float, scale: float = 1.0, head: int = 0):
    """Mean squared error between f_σ(S_i) and scale·γ^{t_i}.

    Returns ``(loss, grad)`` with ``grad`` over the full parameter vector;
    with a shared critic/correction net only the trunk and ``head`` column move.
    """
    target = correction_targets(buffer.t, gamma, scale)
    out, acts = net.forward_cache(buffer.obs)
    err = out[:, head] - target
    n = err.size
    g = np.zeros_like(out)
    g[:, head] = 2.0 * err / n
    grad, _ = net.backward(acts, g)
    return float(err @ err / n), grad


def _bootstrap(buffer):
    """1 where the successor's value enters the TD target (timeouts bootstrap, terminals do not)."""
    return 1.0 - np.asarray(buffer.terminal, dtype=float)


def value_loss(net: Mlp, buffer, gamma: float, head: int = 0):
    """Semi-gradient mean squared TD error; targets are held constant."""
    next_v = net.forward(buffer.next_obs)[:, head]
    target = buffer.reward + gamma * next_v * _bootstrap(buffer)
    out, acts = net.forward_cache(buffer.obs)
    err = out[:, head] - target
    n = err.size
    g = np.zeros_like(out)
    g[:, head] = 2.0 * err / n
    grad, _ = net.backward(acts, g)
    return float(err @ err / n), grad


def regression_loss(net: Mlp, inputs, targets, head: int = 0):
    """Mean squared error of one output column against fixed targets."""
    out, acts = net.forward_cache(inputs)
    err = out[:, head] - targets
    g = np.zeros_like(out)
    g[:, head] = 2.0 * err / err.size
    grad, _ = net.backward(acts, g)
    return float(err @ err / err.size), grad


@dataclass(frozen=True)
class AdvantageConfig:
    mode: str = "td"
    lam: float = 0.95

    def __post_init__(self):
        if self.mode not in ("td", "gae"):
            raise ConfigError(f"advantage mode must be 'td' or 'gae', got {self.mode!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")


def episode_cuts(buffer) -> np.ndarray:
    """True at the last transition of every episode segment inside the buffer."""
    cut = np.asarray(buffer.terminal, bool) | np.asarray(buffer.timeout, bool)
    cut = cut.copy()
    if cut.size:
        cut[-1] = True
    return cut


def _values(value_net, x, head):
    if isinstance(value_net, Mlp):
        return value_net.forward(x)[:, head]
    return np.asarray(value_net(x), dtype=float)


def advantages(value_net, buffer, gamma: float, cfg: AdvantageConfig = AdvantageConfig(), head: int = 0):
    """One-step TD errors (``td``) or their λ-discounted sums within each episode (``gae``).

    ``value_net`` is an :class:`Mlp` (column ``head`` is V) or any callable mapping
    a batch of observations to values.
    """
    v = _values(value_net, buffer.obs, head)
    next_v = _values(value_net, buffer.next_obs, head)
    terminal = np.asarray(buffer.terminal, dtype=bool)
    reward = np.asarray(buffer.reward, dtype=float)
    if cfg.mode == "td":
        return reward + gamma * next_v * (~terminal) - v
    return kernels.gae(reward, v, next_v, terminal, episode_cuts(buffer), gamma, cfg.lam)
