"""Noise-aware classifiers p(c | x_t, t) with input-gradient access.

Two variants:

* ``linear``: one linear layer on the concatenation (x_t, t/T).
* ``mlp``: the shared MLP with a sinusoidal time path and no class
  embedding.

Both expose log-probabilities through a stable log-sum-exp and exact
reverse-mode gradients of log p(c | x_t, t) with respect to x_t, which is
what classifier guidance consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import DEFAULT_TIME_SCALE, NoiseSchedule, forward_marginal
from .errors import ConfigError, TrainingError
from .mlp import MlpSpec, _backward_from_cache, _forward_cached, init_params, time_embedding
from .optim import OptimizerState, optimizer_step
from .params import ParamVector
from .rng import standard_normal, stream

CLASSIFIER_KINDS = ("linear", "mlp")


@dataclass
class ClassifierNet:
    kind: str
    spec: MlpSpec
    params: ParamVector
    num_classes: int
    schedule: NoiseSchedule
    time_scale: float = DEFAULT_TIME_SCALE

    def __post_init__(self):
        if self.kind not in CLASSIFIER_KINDS:
            raise ConfigError(f"classifier kind must be one of {CLASSIFIER_KINDS}")
        if self.spec.output_dim != self.num_classes:
            raise ConfigError("classifier output dim must equal num_classes")

    @property
    def data_dim(self) -> int:
        return self.spec.input_dim - (1 if self.kind == "linear" else 0)

    def _features(self, x: np.ndarray, t):
        n = x.shape[0]
        tt = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        self.schedule._check_t(tt)
        u = tt / self.schedule.T
        if self.kind == "linear":
            return np.concatenate([x, u[:, None]], axis=1), None
        return x, time_embedding(u * self.time_scale, self.spec.time_embed_dim)

    def _logits_cached(self, x: np.ndarray, t):
        feats, t_emb = self._features(x, t)
        cache, _ = _forward_cached(self.spec, self.params, feats, t_emb, None)
        return cache

    def logits(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        cache = self._logits_cached(x[None, :] if single else x, t)
        return cache.y[0] if single else cache.y


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=-1, keepdims=True)
    return logits - m - np.log(np.sum(np.exp(logits - m), axis=-1, keepdims=True))


def predict_proba(net: ClassifierNet, x, t) -> np.ndarray:
    return np.exp(log_softmax(net.logits(x, t)))


def train_classifier(
    dataset,
    net: ClassifierNet,
    opt: OptimizerState,
    steps: int,
    batch_size: int,
    seed: int,
) -> np.ndarray:
    """Cross-entropy on forward-diffused inputs, t ~ Uniform{1..T}."""
    if batch_size > len(dataset):
        raise ConfigError("batch_size exceeds dataset size")
    rng = stream(seed, "train-classifier")
    sched = net.schedule
    losses = np.empty(steps)
    for step in range(steps):
        idx = rng.integers(0, len(dataset), batch_size)
        x0 = dataset.points[idx]
        labels = dataset.labels[idx]
        t = rng.integers(1, sched.T + 1, batch_size)
        eps = standard_normal(rng, x0.shape)
        x_t = forward_marginal(sched, x0, t, eps)
        cache = net._logits_cached(x_t, t)
        logp = log_softmax(cache.y)
        loss = float(-np.mean(logp[np.arange(batch_size), labels]))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite classifier loss at step {step}: {loss}")
        losses[step] = loss
        cot = np.exp(logp)
        cot[np.arange(batch_size), labels] -= 1.0
        grads = _backward_from_cache(net.spec, net.params, cache, cot / batch_size)
        optimizer_step(opt, net.params, grads.params)
    return losses


def log_prob_grad(net: ClassifierNet, x_t, t, c: int):
    """Return log p(c | x_t, t) and its exact gradient w.r.t. x_t.

    For the linear variant the gradient is restricted to the data
    coordinates (the appended t/T feature is not part of x_t).
    """
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if not 0 <= c < net.num_classes:
        raise ConfigError(f"class id {c} out of range")
    cache = net._logits_cached(x2, t)
    logp = log_softmax(cache.y)
    cot = -np.exp(logp)
    cot[:, c] += 1.0  # d log softmax_c / d logits = onehot(c) - p
    grads = _backward_from_cache(net.spec, net.params, cache, cot)
    grad_x = grads.x[:, : net.data_dim]
    if single:
        return float(logp[0, c]), grad_x[0]
    return logp[:, c], grad_x


def make_classifier(
    kind: str,
    data_dim: int,
    schedule: NoiseSchedule,
    num_classes: int = 2,
    hidden_dims=(128, 128, 128, 128),
    activation: str = "silu",
    time_embed_dim: int = 64,
    time_scale: float = DEFAULT_TIME_SCALE,
    seed: int = 0,
) -> ClassifierNet:
    if kind == "linear":
        spec = MlpSpec(input_dim=data_dim + 1, hidden_dims=(), output_dim=num_classes)
    elif kind == "mlp":
        spec = MlpSpec(
            input_dim=data_dim,
            hidden_dims=tuple(hidden_dims),
            output_dim=num_classes,
            activation=activation,
            time_embed_dim=time_embed_dim,
        )
    else:
        raise ConfigError(f"classifier kind must be one of {CLASSIFIER_KINDS}")
    params = init_params(spec, stream(seed, "init-classifier"))
    return ClassifierNet(
        kind=kind,
        spec=spec,
        params=params,
        num_classes=num_classes,
        schedule=schedule,
        time_scale=time_scale,
    )
