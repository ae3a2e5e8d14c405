"""Mixture-density goal estimator written directly in numpy.

A two-hidden-layer ReLU perceptron maps a feature vector to the parameters of
an ``M``-component diagonal Gaussian mixture over the ``d``-dimensional goal.
Output head layout: ``[logits (M) | means (M*d) | log-stds (M*d)]``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .geometry import AgentClass, Standardizer, context_features

logger = logging.getLogger(__name__)

SIGMA_MIN = 1e-3
SIGMA_MAX = 1e3
HIDDEN = (128, 128)
LOG_2PI = math.log(2.0 * math.pi)
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    mixtures: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0 or self.mixtures < 1:
            raise ConfigError(f"invalid training configuration: {self}")


TRAIN_PROFILES = {
    "eth_ucy": TrainConfig(batch_size=1, epochs=30, mixtures=6),
    "waymo": TrainConfig(batch_size=128, epochs=100, mixtures=5),
    "nuscenes": TrainConfig(batch_size=128, epochs=100, mixtures=5),
}


@dataclass(frozen=True)
class GoalMixture:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    @property
    def M(self) -> int:
        return len(self.weights)


@dataclass
class MdnNetwork:
    input_dim: int
    mixtures: int = 5
    goal_dim: int = 2
    hidden: tuple = HIDDEN
    params: dict = field(default_factory=dict)
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX
    # feature layout and provenance, carried into the model file
    history_len: int = 0
    context_size: int = 0
    context_radius: float = 0.0
    agent_class: AgentClass = AgentClass.PEDESTRIAN
    standardizer: Standardizer = field(default_factory=Standardizer.identity)
    seed: int = 0

    @property
    def output_dim(self) -> int:
        return self.mixtures * (1 + 2 * self.goal_dim)

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]

    @classmethod
    def create(cls, input_dim: int, mixtures: int = 5, goal_dim: int = 2, hidden=HIDDEN,
               seed: int = 0, goal_samples=None, **meta) -> "MdnNetwork":
        """Fan-in scaled uniform weights, zero biases.

        With ``goal_samples`` (training targets, ``(n, goal_dim)``) the mean-head
        biases start at ``M`` distinct targets drawn with the same seed, which
        keeps components from starting on top of each other.
        """
        net = cls(input_dim, mixtures, goal_dim, tuple(hidden), seed=seed, **meta)
        rng = np.random.default_rng(seed)
        dims = net.dims
        for k in range(len(dims) - 1):
            bound = 1.0 / math.sqrt(dims[k])
            net.params[f"W{k + 1}"] = rng.uniform(-bound, bound, size=(dims[k], dims[k + 1]))
            net.params[f"b{k + 1}"] = np.zeros(dims[k + 1])
        if goal_samples is not None:
            G = np.asarray(goal_samples, dtype=float).reshape(-1, goal_dim)
            if len(G) == 0:
                raise DataError("goal_samples is empty")
            idx = rng.choice(len(G), mixtures, replace=len(G) < mixtures)
            head = net.params[f"b{len(dims) - 1}"]
            head[mixtures:mixtures + mixtures * goal_dim] = G[idx].ravel()
        return net

    def copy(self) -> "MdnNetwork":
        clone = MdnNetwork(**{**self.__dict__, "params": {}})
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    # -- feature construction -------------------------------------------------
    def features(self, history_ego, context_ego=None) -> np.ndarray:
        h = np.asarray(history_ego, dtype=float).ravel()
        if self.context_size:
            ctx = np.zeros((0, 2)) if context_ego is None else context_ego
            return np.concatenate([h, context_features(ctx, self.context_size)])
        return h

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "layout_version": 1,
            "dims": self.dims,
            "M": self.mixtures,
            "goal_dim": self.goal_dim,
            "weights": {k: self.params[k].tolist() for k in PARAM_NAMES},
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "history_len": self.history_len,
            "context_size": self.context_size,
            "context_radius": self.context_radius,
            "agent_class": AgentClass(self.agent_class).value,
            "standardizer": self.standardizer.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdnNetwork":
        dims = d["dims"]
        net = cls(dims[0], int(d["M"]), int(d["goal_dim"]), tuple(dims[1:-1]),
                  sigma_min=float(d["sigma_min"]), sigma_max=float(d["sigma_max"]),
                  history_len=int(d["history_len"]), context_size=int(d["context_size"]),
                  context_radius=float(d["context_radius"]),
                  agent_class=AgentClass(d["agent_class"]),
                  standardizer=Standardizer.from_dict(d["standardizer"]), seed=int(d["seed"]))
        net.params = {k: np.asarray(v, dtype=float) for k, v in d["weights"].items()}
        if net.params["W3"].shape[1] != net.output_dim:
            raise ConfigError("goal model head width does not match M * (1 + 2d)")
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "MdnNetwork":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: not a goal model file ({exc})") from exc


def _logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    amax = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(amax, axis) + np.log(np.sum(np.exp(a - amax), axis=axis))


def _forward(net: MdnNetwork, X: np.ndarray):
    p = net.params
    a1 = X @ p["W1"] + p["b1"]
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ p["W2"] + p["b2"]
    h2 = np.maximum(a2, 0.0)
    out = h2 @ p["W3"] + p["b3"]
    M, d = net.mixtures, net.goal_dim
    logits = out[:, :M]
    mu = out[:, M:M + M * d].reshape(-1, M, d)
    raw = out[:, M + M * d:].reshape(-1, M, d)
    lo, hi = math.log(net.sigma_min), math.log(net.sigma_max)
    log_sigma = np.clip(raw, lo, hi)
    cache = (X, a1, h1, a2, h2, (raw >= lo) & (raw <= hi))
    return logits, mu, log_sigma, cache


def _check_params(net: MdnNetwork):
    for k, v in net.params.items():
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"goal network parameter {k} is not finite")


def forward_batch(net: MdnNetwork, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mixture parameters for a batch: weights ``(n, M)``, means and stds ``(n, M, d)``."""
    _check_params(net)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != net.input_dim:
        raise ConfigError(f"feature length {X.shape[1]} != network input {net.input_dim}")
    logits, mu, log_sigma, _ = _forward(net, X)
    log_pi = logits - _logsumexp(logits)[:, None]
    return np.exp(log_pi), mu, np.exp(log_sigma)


def forward(net: MdnNetwork, x) -> GoalMixture:
    w, mu, sigma = forward_batch(net, np.asarray(x, dtype=float)[None])
    return GoalMixture(w[0], mu[0], sigma[0])


def _component_loglik(g, mu, log_sigma):
    z = (g[:, None, :] - mu) / np.exp(log_sigma)
    d = mu.shape[-1]
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_sigma, axis=-1) - 0.5 * d * LOG_2PI, z


def nll(mixture: GoalMixture, g) -> float:
    """``-log sum_j pi_j N(g; mu_j, diag sigma_j^2)`` via a max-shifted log-sum-exp."""
    g = np.asarray(g, dtype=float)[None]
    with np.errstate(divide="ignore"):
        log_pi = np.log(mixture.weights)
    comp, _ = _component_loglik(g, mixture.means[None], np.log(mixture.stds)[None])
    return float(-_logsumexp(log_pi[None] + comp)[0])


def loss_and_grad(net: MdnNetwork, X, G) -> tuple[float, dict]:
    """Mean NLL over a batch and its gradient with respect to every parameter."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n = len(X)
    logits, mu, log_sigma, (X, a1, h1, a2, h2, in_range) = _forward(net, X)
    log_pi = logits - _logsumexp(logits)[:, None]
    comp, z = _component_loglik(G, mu, log_sigma)
    joint = log_pi + comp
    total = _logsumexp(joint)
    loss = float(-np.mean(total))

    gamma = np.exp(joint - total[:, None])
    d_logits = np.exp(log_pi) - gamma
    sigma = np.exp(log_sigma)
    d_mu = -gamma[..., None] * z / sigma
    d_raw = gamma[..., None] * (1.0 - z * z) * in_range
    d_out = np.concatenate([d_logits, d_mu.reshape(n, -1), d_raw.reshape(n, -1)], axis=1) / n

    p = net.params
    grads = {"W3": h2.T @ d_out, "b3": d_out.sum(axis=0)}
    d_a2 = (d_out @ p["W3"].T) * (a2 > 0)
    grads["W2"] = h1.T @ d_a2
    grads["b2"] = d_a2.sum(axis=0)
    d_a1 = (d_a2 @ p["W2"].T) * (a1 > 0)
    grads["W1"] = X.T @ d_a1
    grads["b1"] = d_a1.sum(axis=0)
    return loss, grads


def mean_nll(net: MdnNetwork, X, G) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    logits, mu, log_sigma, _ = _forward(net, X)
    log_pi = logits - _logsumexp(logits)[:, None]
    comp, _ = _component_loglik(G, mu, log_sigma)
    return float(-np.mean(_logsumexp(log_pi + comp)))


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)
            params[k] -= (self.lr / bc1) * self.m[k] / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class TrainResult:
    network: MdnNetwork
    losses: list
    diverged: bool = False
    step_losses: list = field(default_factory=list)


def train(net: MdnNetwork, X, G, cfg: TrainConfig, record_steps: bool = False) -> TrainResult:
    """Minimize mean NLL with Adam over shuffled mini-batches.

    Returns the per-epoch mean training NLL. On a non-finite loss training
    stops and the parameters from the start of that epoch are returned.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if len(X) == 0:
        raise DataError("goal estimator training set is empty")
    if len(X) != len(G):
        raise ConfigError("feature and goal counts differ")
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    losses, step_losses = [], []
    for epoch in range(cfg.epochs):
        checkpoint = {k: v.copy() for k, v in net.params.items()}
        order = rng.permutation(len(X))
        total, count = 0.0, 0
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grad(net, X[idx], G[idx])
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                logger.warning("non-finite loss at epoch %d; restoring last finite checkpoint", epoch)
                net.params = checkpoint
                return TrainResult(net, losses, True, step_losses)
            opt.step(net.params, grads)
            total += loss * len(idx)
            count += len(idx)
            if record_steps:
                step_losses.append(loss)
        losses.append(total / count)
        logger.debug("epoch %d mean NLL %.4f", epoch, losses[-1])
    return TrainResult(net, losses, False, step_losses)


def sample_goals(mixture: GoalMixture, k: int, seed=None) -> np.ndarray:
    """Draw ``k`` goals: a component from ``categorical(weights)``, then a diagonal Gaussian."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = np.asarray(mixture.weights, dtype=float)
    comps = rng.choice(len(w), size=k, p=w / w.sum())
    noise = rng.standard_normal((k, mixture.means.shape[1]))
    return mixture.means[comps] + mixture.stds[comps] * noise


def expected_goal(mixture: GoalMixture) -> np.ndarray:
    return np.asarray(mixture.weights) @ np.asarray(mixture.means)


__all__ = [
    "TrainConfig", "TRAIN_PROFILES", "GoalMixture", "MdnNetwork", "forward", "forward_batch",
    "nll", "loss_and_grad", "mean_nll", "Adam", "TrainResult", "train", "sample_goals",
    "expected_goal",
]
