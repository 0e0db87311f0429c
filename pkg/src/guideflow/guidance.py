"""Vanilla, classifier-guided, and classifier-free samplers on shared noise.

The guided noise predictions are

  CG:  eps(x, t) - w * sqrt(1 - abar_t) * grad_x log p(c | x, t)
  CFG: (1 - w) * eps(x, t, null) + w * eps(x, t, c)

The CFG form is an exact rearrangement of eps_u + w (eps_c - eps_u) and
makes the degenerate scales bitwise: w = 1 returns the conditional
prediction and w = 0 the unconditional one.

A NoiseBank holds every Gaussian draw of a run (initial state plus one
slot per reverse step), so two samplers given the same bank see exactly
the same noise realizations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .classifier import ClassifierNet, log_prob_grad
from .diffusion import DenoiserNet, reverse_loop
from .errors import ConfigError
from .rng import standard_normal, stream


class GuidanceMode(str, enum.Enum):
    VANILLA = "vanilla"
    CLASSIFIER = "cg"
    CLASSIFIER_FREE = "cfg"


@dataclass(frozen=True)
class GuidanceConfig:
    mode: GuidanceMode
    scale: float = 1.0
    class_id: int | None = 0  # None = unconditional (vanilla mode only)

    def __post_init__(self):
        object.__setattr__(self, "mode", GuidanceMode(self.mode))
        if self.scale < 0.0:
            raise ConfigError("guidance scale must be >= 0")
        if self.class_id is None and self.mode != GuidanceMode.VANILLA:
            raise ConfigError(f"{self.mode.value} guidance needs a class id")


@dataclass
class NoiseBank:
    """Precomputed Gaussian draws of shape (n_chains, T + 1, dim)."""

    seed: int
    values: np.ndarray

    @classmethod
    def draw(cls, seed: int, n_chains: int, T: int, dim: int, index: int = 0) -> "NoiseBank":
        rng = stream(seed, "noise-bank", index)
        return cls(seed=seed, values=standard_normal(rng, (n_chains, T + 1, dim)))

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]


@dataclass
class Trajectory:
    chain_id: int
    ts: np.ndarray  # T down to 0
    states: np.ndarray  # (T + 1, d)
    config: GuidanceConfig
    seed: int


@dataclass
class TrajectoryBatch:
    ts: np.ndarray  # (T + 1,), T down to 0
    states: np.ndarray  # (T + 1, n, d)
    config: GuidanceConfig
    seed: int

    @property
    def n_chains(self) -> int:
        return self.states.shape[1]

    def final(self) -> np.ndarray:
        return self.states[-1]

    def chain(self, i: int) -> Trajectory:
        return Trajectory(i, self.ts, self.states[:, i, :], self.config, self.seed)

    def __iter__(self):
        return (self.chain(i) for i in range(self.n_chains))


def guided_epsilon_cg(
    denoiser: DenoiserNet, classifier: ClassifierNet, x_t, t, c: int, w: float
) -> np.ndarray:
    """Classifier-guided noise; the denoiser is evaluated unconditionally."""
    eps = denoiser.epsilon(x_t, t, None)
    _, grad = log_prob_grad(classifier, x_t, t, c)
    coef = w * np.sqrt(1.0 - denoiser.schedule.alpha_bar_at(t))
    return eps - coef * grad


def guided_epsilon_cfg(denoiser: DenoiserNet, x_t, t, c, w: float) -> np.ndarray:
    """Classifier-free guided noise from one dropout-trained denoiser."""
    if not denoiser.conditional:
        raise ConfigError("classifier-free guidance needs a conditional denoiser")
    eps_c = denoiser.epsilon(x_t, t, c)
    eps_u = denoiser.epsilon(x_t, t, None)
    return (1.0 - w) * eps_u + w * eps_c


def sample_guided(
    denoiser: DenoiserNet,
    config: GuidanceConfig,
    n_chains: int,
    seed: int,
    classifier: ClassifierNet | None = None,
    noise_bank: NoiseBank | None = None,
    record_trajectories: bool = False,
):
    """Run the reverse chain with the chosen guidance; returns
    (samples, TrajectoryBatch | None).

    With a supplied NoiseBank both the initial state and every per-step
    draw come from the bank, so different samplers can be compared on
    identical noise.
    """
    sched = denoiser.schedule
    d = denoiser.data_dim
    if config.mode == GuidanceMode.CLASSIFIER:
        if classifier is None:
            raise ConfigError("classifier guidance needs a classifier")
        if classifier.data_dim != d:
            raise ConfigError("classifier and denoiser data dims differ")
    if config.mode == GuidanceMode.CLASSIFIER_FREE:
        if not denoiser.conditional or denoiser.dropout_prob <= 0.0:
            raise ConfigError("classifier-free guidance needs a dropout-trained denoiser")
    if noise_bank is None:
        noise_bank = NoiseBank.draw(seed, n_chains, sched.T, d)
    if noise_bank.values.shape != (n_chains, sched.T + 1, d):
        raise ConfigError(
            f"noise bank shape {noise_bank.values.shape} does not match "
            f"(n_chains={n_chains}, T+1={sched.T + 1}, dim={d})"
        )

    c = config.class_id
    if config.mode == GuidanceMode.VANILLA:
        ids = c if denoiser.conditional else None
        eps_fn = lambda x, t: denoiser.epsilon(x, t, ids)  # ids None = null class
    elif config.mode == GuidanceMode.CLASSIFIER:
        eps_fn = lambda x, t: guided_epsilon_cg(denoiser, classifier, x, t, c, config.scale)
    else:
        eps_fn = lambda x, t: guided_epsilon_cfg(denoiser, x, t, c, config.scale)

    x0, states = reverse_loop(sched, eps_fn, noise_bank.values, record=record_trajectories)
    batch = None
    if record_trajectories:
        batch = TrajectoryBatch(
            ts=np.arange(sched.T, -1, -1), states=states, config=config, seed=seed
        )
    return x0, batch


def write_trajectories_csv(path, batch: TrajectoryBatch) -> None:
    """One row per (chain, step): ``chain_id,t,x0[,x1]``."""
    d = batch.states.shape[2]
    cols = ["chain_id", "t"] + [f"x{i}" for i in range(d)]
    lines = [",".join(cols)]
    for i in range(batch.n_chains):
        for t, row in zip(batch.ts, batch.states[:, i, :]):
            lines.append(",".join([str(i), str(int(t))] + [repr(float(v)) for v in row]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectories_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of write_trajectories_csv: returns (ts, states (T+1, n, d))."""
    from .errors import DataError

    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["chain_id", "t"]:
            raise DataError(f"bad trajectory header in {path}")
        d = len(header) - 2
        per_chain: dict[int, list[tuple[int, list[float]]]] = {}
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != d + 2:
                raise DataError(f"bad trajectory row in {path}")
            per_chain.setdefault(int(parts[0]), []).append(
                (int(parts[1]), [float(v) for v in parts[2:]])
            )
    if not per_chain:
        raise DataError(f"no trajectories in {path}")
    n = len(per_chain)
    ts = np.array([t for t, _ in per_chain[0]], dtype=np.int64)
    states = np.empty((len(ts), n, d))
    for i in range(n):
        rows = per_chain[i]
        if [t for t, _ in rows] != list(ts):
            raise DataError(f"chain {i} in {path} has inconsistent steps")
        states[:, i, :] = np.array([x for _, x in rows])
    return ts, states
