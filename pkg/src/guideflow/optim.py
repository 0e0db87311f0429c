"""Adam/AdamW with bias correction, plus an EMA shadow of the weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError
from .params import ParamVector


@dataclass
class OptimizerState:
    kind: str  # "adam" | "adamw"
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    first_moment: np.ndarray = field(default=None, repr=False)
    second_moment: np.ndarray = field(default=None, repr=False)


def make_optimizer(
    kind: str,
    params: ParamVector,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
    weight_decay: float = 0.0,
) -> OptimizerState:
    kind = kind.lower()
    if kind not in ("adam", "adamw"):
        raise ConfigError(f"unknown optimizer kind {kind!r}")
    if kind == "adam" and weight_decay != 0.0:
        raise ConfigError("adam does not take weight_decay; use adamw")
    return OptimizerState(
        kind=kind,
        learning_rate=float(learning_rate),
        beta1=float(beta1),
        beta2=float(beta2),
        epsilon=float(epsilon),
        weight_decay=float(weight_decay),
        first_moment=np.zeros(params.size),
        second_moment=np.zeros(params.size),
    )


def optimizer_step(state: OptimizerState, params: ParamVector, grads: ParamVector) -> None:
    """One in-place update of ``params`` (and ``state``).

    AdamW applies decoupled weight decay: the decay term multiplies the
    raw parameters, not the adaptive update.
    """
    if not params.same_layout(grads):
        raise ConfigError("gradient layout does not match parameter layout")
    g = grads.values
    if not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite gradient elements at step {state.step_count + 1}")
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * g
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * np.square(g)
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    update = m_hat / (np.sqrt(v_hat) + state.epsilon)
    if state.kind == "adamw" and state.weight_decay != 0.0:
        update = update + state.weight_decay * params.values
    params.values -= state.learning_rate * update


@dataclass
class EmaState:
    decay: float
    shadow: ParamVector

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ConfigError(f"EMA decay must lie in [0, 1], got {self.decay}")


def make_ema(params: ParamVector, decay: float) -> EmaState:
    return EmaState(decay=float(decay), shadow=params.copy())


def ema_update(ema: EmaState, params: ParamVector) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * params, elementwise."""
    if not ema.shadow.same_layout(params):
        raise ConfigError("EMA shadow layout does not match parameters")
    ema.shadow.values *= ema.decay
    ema.shadow.values += (1.0 - ema.decay) * params.values
    return ema
