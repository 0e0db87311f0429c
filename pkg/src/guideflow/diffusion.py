"""Discrete-time DDPM: schedule, forward corruption, training, sampling.

Conventions (stepping from x_{t+1} down to x_t):

  q(x_t | x_0)   = N(sqrt(abar_t) x_0, (1 - abar_t) I)
  posterior mean = (x_{t+1} - beta_{t+1} / sqrt(1 - abar_{t+1}) * eps_hat)
                   / sqrt(alpha_{t+1})
  reverse noise  ~ N(0, beta_{t+1} I), skipped on the final step (t = 0
                   returns the mean).

The network sees normalized time t/T through the sinusoidal embedding,
scaled by ``time_scale`` so the frequencies cover the step range for any
T. Condition dropout replaces a label with the null class id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError
from .mlp import MlpSpec, _backward_from_cache, _forward_cached, init_params, time_embedding
from .optim import EmaState, OptimizerState, ema_update, optimizer_step
from .params import ParamVector
from .rng import standard_normal, stream

ALPHA_BAR_T_MAX = 1e-3  # terminal marginal must be near-white
DEFAULT_TIME_SCALE = 1000.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables beta_t, alpha_t = 1 - beta_t, abar_t = prod alpha, t in 1..T."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return self.beta.shape[0]

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02):
        if T < 1:
            raise ConfigError("T must be at least 1")
        beta = np.linspace(beta_start, beta_end, T)
        sched = cls.from_betas(beta)
        sched.validate()
        return sched

    @classmethod
    def from_betas(cls, beta) -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        alpha = 1.0 - beta
        return cls(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))

    def validate(self) -> None:
        if np.any(self.beta <= 0.0) or np.any(self.beta >= 1.0):
            raise ConfigError("betas must lie strictly in (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ConfigError("alpha_bar must be strictly decreasing")
        if self.alpha_bar[-1] >= ALPHA_BAR_T_MAX:
            raise ConfigError(
                f"alpha_bar at T is {self.alpha_bar[-1]:.3e}; must be < {ALPHA_BAR_T_MAX} "
                "(raise T or widen the beta range)"
            )

    def _check_t(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 1) or np.any(t > self.T):
            raise ConfigError(f"step out of range 1..{self.T}")
        return t

    def alpha_at(self, t):
        return self.alpha[self._check_t(t) - 1]

    def alpha_bar_at(self, t):
        return self.alpha_bar[self._check_t(t) - 1]

    def beta_at(self, t):
        return self.beta[self._check_t(t) - 1]


def forward_marginal(schedule: NoiseSchedule, x0, t, noise) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise, exactly."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    ab = schedule.alpha_bar_at(t)
    ab = np.expand_dims(ab, -1) if x0.ndim == 2 and np.ndim(ab) == 1 else ab
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


@dataclass
class DenoiserNet:
    """Noise estimator eps(x_t, t[, c]) over a fixed schedule."""

    spec: MlpSpec
    params: ParamVector
    schedule: NoiseSchedule
    conditional: bool
    dropout_prob: float = 0.0
    time_scale: float = DEFAULT_TIME_SCALE

    def __post_init__(self):
        if self.spec.output_dim != self.spec.input_dim:
            raise ConfigError("denoiser output dim must equal data dim")
        if self.conditional and self.spec.class_embed_dim == 0:
            raise ConfigError("conditional denoiser needs a class embedding path")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError("dropout_prob must lie in [0, 1)")

    @property
    def data_dim(self) -> int:
        return self.spec.input_dim

    def _embed_inputs(self, x: np.ndarray, t, class_ids):
        n = x.shape[0]
        tt = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        self.schedule._check_t(tt)
        t_emb = time_embedding(tt / self.schedule.T * self.time_scale, self.spec.time_embed_dim)
        if not self.conditional:
            if class_ids is not None:
                raise ConfigError("unconditional denoiser cannot take class ids")
            return t_emb, None, None
        if class_ids is None:
            ids = np.full(n, self.spec.null_class, dtype=np.int64)
        else:
            ids = np.broadcast_to(np.asarray(class_ids, dtype=np.int64), (n,)).copy()
            if np.any(ids < 0) or np.any(ids > self.spec.null_class):
                raise ConfigError("class id out of range")
        return t_emb, ids, self.params["class_embed"][ids]

    def epsilon(self, x, t, class_ids=None) -> np.ndarray:
        """Predicted noise; class_ids=None means the null (dropped) class."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        t_emb, _, c_emb = self._embed_inputs(x2, t, class_ids)
        cache, _ = _forward_cached(self.spec, self.params, x2, t_emb, c_emb)
        return cache.y[0] if single else cache.y


def apply_condition_dropout(labels: np.ndarray, prob: float, null_class: int, rng) -> np.ndarray:
    """Replace each label by the null class with probability ``prob``."""
    ids = labels.copy()
    if prob > 0.0:
        ids[rng.random(ids.shape[0]) < prob] = null_class
    return ids


def train_denoiser(
    dataset,
    net: DenoiserNet,
    opt: OptimizerState,
    steps: int,
    batch_size: int,
    seed: int,
    ema: EmaState | None = None,
) -> np.ndarray:
    """Minimize E ||eps - eps_theta(x_t, t, c)||^2; returns per-step losses.

    t ~ Uniform{1..T}, eps ~ N(0, I); with dropout_prob > 0 each label is
    replaced by the null class with that probability.
    """
    if batch_size > len(dataset):
        raise ConfigError("batch_size exceeds dataset size")
    rng = stream(seed, "train-denoiser")
    sched = net.schedule
    losses = np.empty(steps)
    for step in range(steps):
        idx = rng.integers(0, len(dataset), batch_size)
        x0 = dataset.points[idx]
        t = rng.integers(1, sched.T + 1, batch_size)
        eps = standard_normal(rng, x0.shape)
        x_t = forward_marginal(sched, x0, t, eps)
        ids = None
        if net.conditional:
            ids = apply_condition_dropout(
                dataset.labels[idx], net.dropout_prob, net.spec.null_class, rng
            )
        t_emb, ids, c_emb = net._embed_inputs(x_t, t, ids)
        cache, _ = _forward_cached(net.spec, net.params, x_t, t_emb, c_emb)
        resid = cache.y - eps
        loss = float(np.mean(np.sum(resid * resid, axis=1)))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite denoiser loss at step {step}: {loss}")
        losses[step] = loss
        grads = _backward_from_cache(net.spec, net.params, cache, 2.0 * resid / batch_size)
        if ids is not None:
            np.add.at(grads.params["class_embed"], ids, grads.c_embed)
        optimizer_step(opt, net.params, grads.params)
        if ema is not None:
            ema_update(ema, net.params)
    return losses


def posterior_mean_from_eps(schedule: NoiseSchedule, x_next, t_next, eps_hat) -> np.ndarray:
    """Mean of p(x_t | x_{t+1}) given the predicted noise at step t_next = t + 1."""
    a = schedule.alpha_at(t_next)
    ab = schedule.alpha_bar_at(t_next)
    b = schedule.beta_at(t_next)
    return (np.asarray(x_next, dtype=np.float64) - b / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)


def posterior_mean(net: DenoiserNet, x_next, t_next: int, class_ids=None) -> np.ndarray:
    return posterior_mean_from_eps(
        net.schedule, x_next, t_next, net.epsilon(x_next, t_next, class_ids)
    )


def reverse_loop(
    schedule: NoiseSchedule,
    eps_fn,
    bank: np.ndarray,
    record: bool = False,
):
    """Ancestral sampling driven by a noise bank of shape (n, T+1, d).

    Slot 0 is the initial x_T; slot s (1 <= s <= T-1) is the Gaussian
    noise injected when producing x_{T-s}. The final step returns the
    mean, so slot T is never consumed. ``eps_fn(x, t_next)`` supplies the
    (possibly guided) noise prediction.
    """
    T = schedule.T
    if bank.ndim != 3 or bank.shape[1] != T + 1:
        raise ConfigError(f"noise bank shape {bank.shape} does not match T={T}")
    x = bank[:, 0, :].copy()
    states = [x.copy()] if record else None
    for t_next in range(T, 0, -1):
        mu = posterior_mean_from_eps(schedule, x, t_next, eps_fn(x, t_next))
        if t_next > 1:
            x = mu + np.sqrt(schedule.beta_at(t_next)) * bank[:, T - t_next + 1, :]
        else:
            x = mu
        if record:
            states.append(x.copy())
    return x, (np.stack(states) if record else None)


def ddpm_sample(
    net: DenoiserNet,
    class_id: int | None,
    n: int,
    seed: int,
    record_trajectory: bool = False,
):
    """Plain conditional/unconditional sampling; pure function of (net, c, seed)."""
    bank = standard_normal(
        stream(seed, "ddpm-sample"), (n, net.schedule.T + 1, net.data_dim)
    )
    ids = None if class_id is None else np.full(n, class_id, dtype=np.int64)
    x0, states = reverse_loop(
        net.schedule, lambda x, t: net.epsilon(x, t, ids), bank, record=record_trajectory
    )
    return x0, states


def make_denoiser(
    data_dim: int,
    schedule: NoiseSchedule,
    conditional: bool,
    num_classes: int = 2,
    hidden_dims=(128, 128, 128, 128),
    activation: str = "silu",
    time_embed_dim: int = 64,
    class_embed_dim: int = 64,
    dropout_prob: float = 0.0,
    time_scale: float = DEFAULT_TIME_SCALE,
    seed: int = 0,
) -> DenoiserNet:
    spec = MlpSpec(
        input_dim=data_dim,
        hidden_dims=tuple(hidden_dims),
        output_dim=data_dim,
        activation=activation,
        time_embed_dim=time_embed_dim,
        class_embed_dim=class_embed_dim if conditional else 0,
        num_classes=num_classes if conditional else 0,
    )
    params = init_params(spec, stream(seed, "init-denoiser"))
    return DenoiserNet(
        spec=spec,
        params=params,
        schedule=schedule,
        conditional=conditional,
        dropout_prob=dropout_prob,
        time_scale=time_scale,
    )
