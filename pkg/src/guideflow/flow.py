"""Rectified-flow postprocessing toward top-k nearest real neighbors.

Training pairs couple a generated sample with a uniform draw from its k
nearest same-class real points (re-drawn every iteration). The velocity
field regresses onto (target - source) along the straight interpolation
x_t = (1 - t) source + t target, so integrating dz/dt = v(z, c, t) from
t = 0 to 1 transports generated samples toward the real set.

Nearest-neighbor search is exact brute force over squared Euclidean
distance with ties broken by lowest index. ``knn_query`` is the single
query primitive; ``nearest_neighbors`` is the same search blocked for
large query sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .datasets import Dataset
from .errors import ConfigError, DataError, IntegrationError, TrainingError
from .diffusion import DEFAULT_TIME_SCALE
from .mlp import MlpSpec, _backward_from_cache, _forward_cached, init_params, time_embedding
from .optim import OptimizerState, optimizer_step
from .params import ParamVector
from .rng import stream


@dataclass(frozen=True)
class NnIndex:
    """Immutable point set queried by squared Euclidean distance."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64))
        if self.points.ndim != 2 or self.points.shape[0] == 0:
            raise DataError("NN index needs a non-empty (n, d) point set")

    def __len__(self) -> int:
        return self.points.shape[0]


def build_class_indexes(real: Dataset) -> dict[int, NnIndex]:
    indexes = {}
    for label in range(real.num_classes):
        pts = real.of_class(label)
        if pts.shape[0] == 0:
            raise DataError(f"no real points for class {label}")
        indexes[label] = NnIndex(pts)
    return indexes


def knn_query(index: NnIndex, q, k: int) -> list[tuple[np.ndarray, float]]:
    """Exact k nearest points, ascending distance, ties to lowest index."""
    if k < 1 or k > len(index):
        raise ConfigError(f"k must lie in 1..{len(index)}, got {k}")
    q = np.asarray(q, dtype=np.float64)
    diff = index.points - q
    d2 = np.einsum("ij,ij->i", diff, diff)
    order = np.argsort(d2, kind="stable")[:k]
    return [(index.points[i].copy(), float(d2[i])) for i in order]


def nearest_neighbors(
    index: NnIndex,
    queries: np.ndarray,
    k: int,
    query_block: int = 256,
    index_chunk: int = 131072,
) -> tuple[np.ndarray, np.ndarray]:
    """Blocked exact top-k for many queries: (indices, squared distances).

    Uses the expanded-product distance form with argpartition per chunk;
    candidate ties are resolved by (distance, index) like ``knn_query``.
    """
    if k < 1 or k > len(index):
        raise ConfigError(f"k must lie in 1..{len(index)}, got {k}")
    pts = index.points
    queries = np.asarray(queries, dtype=np.float64)
    nq = queries.shape[0]
    pt_sq = np.einsum("ij,ij->i", pts, pts)
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_d2 = np.empty((nq, k))
    for qs in range(0, nq, query_block):
        qe = min(qs + query_block, nq)
        qb = queries[qs:qe]
        q_sq = np.einsum("ij,ij->i", qb, qb)[:, None]
        best_idx = None
        best_d2 = None
        for cs in range(0, pts.shape[0], index_chunk):
            ce = min(cs + index_chunk, pts.shape[0])
            d2 = q_sq + pt_sq[cs:ce][None, :] - 2.0 * (qb @ pts[cs:ce].T)
            np.maximum(d2, 0.0, out=d2)
            take = min(k, ce - cs)
            if take < d2.shape[1]:
                part = np.argpartition(d2, take - 1, axis=1)[:, :take]
            else:
                part = np.broadcast_to(np.arange(d2.shape[1]), d2.shape)
            cand_idx = part + cs
            cand_d2 = np.take_along_axis(d2, part, axis=1)
            if best_idx is None:
                best_idx, best_d2 = cand_idx, cand_d2
            else:
                best_idx = np.concatenate([best_idx, cand_idx], axis=1)
                best_d2 = np.concatenate([best_d2, cand_d2], axis=1)
                if best_idx.shape[1] > k:
                    sel = np.argpartition(best_d2, k - 1, axis=1)[:, :k]
                    best_idx = np.take_along_axis(best_idx, sel, axis=1)
                    best_d2 = np.take_along_axis(best_d2, sel, axis=1)
        # order the k candidates by (distance, index)
        order = np.lexsort((best_idx, best_d2), axis=1)[:, :k]
        out_idx[qs:qe] = np.take_along_axis(best_idx, order, axis=1)
        out_d2[qs:qe] = np.take_along_axis(best_d2, order, axis=1)
    return out_idx, out_d2


@dataclass(frozen=True)
class FlowPair:
    source: np.ndarray
    target: np.ndarray
    label: int


class PairSampler:
    """Per-iteration randomized (source, top-k target) pairs.

    The top-k neighbor lists are fixed by the data; only the choice among
    the k candidates is re-drawn on every batch.
    """

    def __init__(self, generated: Dataset, indexes: dict[int, NnIndex], k: int):
        if len(generated) == 0:
            raise DataError("no generated samples to pair")
        self.sources = generated.points
        self.labels = generated.labels
        self.k = int(k)
        self.class_points: dict[int, np.ndarray] = {}
        self.neighbor_idx = np.empty((len(generated), k), dtype=np.int64)
        for label in np.unique(self.labels):
            if int(label) not in indexes:
                raise DataError(f"no real points for class {label}")
            index = indexes[int(label)]
            rows = np.flatnonzero(self.labels == label)
            idx, _ = nearest_neighbors(index, self.sources[rows], k)
            self.neighbor_idx[rows] = idx
            self.class_points[int(label)] = index.points

    def __len__(self) -> int:
        return self.sources.shape[0]

    def batch(self, rng: np.random.Generator, size: int):
        rows = rng.integers(0, len(self), size)
        choice = rng.integers(0, self.k, size)
        targets = np.empty((size, self.sources.shape[1]))
        labels = self.labels[rows]
        nbr = self.neighbor_idx[rows, choice]
        for label in np.unique(labels):
            m = labels == label
            targets[m] = self.class_points[int(label)][nbr[m]]
        return self.sources[rows], targets, labels

    def pairs(self, seed: int) -> Iterator[FlowPair]:
        rng = stream(seed, "flow-pairs")
        while True:
            src, tgt, lbl = self.batch(rng, 1)
            yield FlowPair(src[0], tgt[0], int(lbl[0]))


def make_training_pairs(
    generated: Dataset, indexes: dict[int, NnIndex], k: int, seed: int
) -> Iterator[FlowPair]:
    """Infinite stream of randomized top-k pairs (one per iteration)."""
    return PairSampler(generated, indexes, k).pairs(seed)


@dataclass
class FlowNet:
    """Velocity field v(z, c, t) over flow time t in [0, 1]."""

    spec: MlpSpec
    params: ParamVector
    conditional: bool
    k: int
    time_scale: float = DEFAULT_TIME_SCALE

    def __post_init__(self):
        if self.spec.output_dim != self.spec.input_dim:
            raise ConfigError("flow output dim must equal data dim")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.conditional and self.spec.class_embed_dim == 0:
            raise ConfigError("conditional flow needs a class embedding path")

    @property
    def data_dim(self) -> int:
        return self.spec.input_dim

    def _embed(self, n: int, t, class_ids):
        tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        t_emb = time_embedding(tt * self.time_scale, self.spec.time_embed_dim)
        if not self.conditional:
            return t_emb, None
        ids = np.broadcast_to(np.asarray(class_ids, dtype=np.int64), (n,))
        return t_emb, self.params["class_embed"][ids]

    def velocity(self, z, t, class_ids=None) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        z2 = z[None, :] if single else z
        t_emb, c_emb = self._embed(z2.shape[0], t, class_ids)
        cache, _ = _forward_cached(self.spec, self.params, z2, t_emb, c_emb)
        return cache.y[0] if single else cache.y


def train_flow(
    pairs: PairSampler,
    net: FlowNet,
    opt: OptimizerState,
    steps: int,
    batch_size: int,
    seed: int,
) -> np.ndarray:
    """Regress v(x_t, c, t) onto (target - source), t ~ Uniform[0, 1]."""
    rng = stream(seed, "train-flow")
    losses = np.empty(steps)
    for step in range(steps):
        src, tgt, labels = pairs.batch(rng, batch_size)
        t = rng.random(batch_size)
        x_t = (1.0 - t)[:, None] * src + t[:, None] * tgt
        v_target = tgt - src
        ids = labels if net.conditional else None
        t_emb, c_emb = net._embed(batch_size, t, ids)
        cache, _ = _forward_cached(net.spec, net.params, x_t, t_emb, c_emb)
        resid = cache.y - v_target
        loss = float(np.mean(np.sum(resid * resid, axis=1)))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite flow loss at step {step}: {loss}")
        losses[step] = loss
        grads = _backward_from_cache(net.spec, net.params, cache, 2.0 * resid / batch_size)
        if ids is not None:
            np.add.at(grads.params["class_embed"], ids, grads.c_embed)
        optimizer_step(opt, net.params, grads.params)
    return losses


def integrate_flow(net_or_field, z0, class_ids=None, n_steps: int = 50, method: str = "rk4"):
    """Solve dz/dt = v(z, c, t) from t = 0 to 1 with a fixed step.

    ``net_or_field`` is a FlowNet or any callable v(z, t) -> dz/dt.
    Methods: ``euler`` and classical ``rk4``.
    """
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    if method not in ("euler", "rk4"):
        raise ConfigError(f"unknown ODE method {method!r}")
    if isinstance(net_or_field, FlowNet):
        f = lambda z, t: net_or_field.velocity(z, t, class_ids)
    else:
        f = net_or_field
    z = np.asarray(z0, dtype=np.float64).copy()
    h = 1.0 / n_steps
    for s in range(n_steps):
        t = s / n_steps
        if method == "euler":
            z = z + h * f(z, t)
        else:
            k1 = f(z, t)
            k2 = f(z + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(z + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(z + h * k3, min(t + h, 1.0))
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise IntegrationError(f"non-finite state at step {s}")
    return z


def postprocess(samples: Dataset, net: FlowNet, n_steps: int = 50, method: str = "rk4") -> Dataset:
    """Integrate every sample under its own label; order preserved."""
    out = np.empty_like(samples.points)
    for label in np.unique(samples.labels):
        m = samples.labels == label
        out[m] = integrate_flow(net, samples.points[m], int(label), n_steps, method)
    return Dataset(out, samples.labels.copy(), num_classes=samples.num_classes)


def make_flow(
    data_dim: int,
    conditional: bool = True,
    num_classes: int = 2,
    k: int = 20,
    hidden_dims=(128, 128, 128, 128),
    activation: str = "silu",
    time_embed_dim: int = 64,
    class_embed_dim: int = 64,
    time_scale: float = DEFAULT_TIME_SCALE,
    seed: int = 0,
) -> FlowNet:
    spec = MlpSpec(
        input_dim=data_dim,
        hidden_dims=tuple(hidden_dims),
        output_dim=data_dim,
        activation=activation,
        time_embed_dim=time_embed_dim,
        class_embed_dim=class_embed_dim if conditional else 0,
        num_classes=num_classes if conditional else 0,
    )
    params = init_params(spec, stream(seed, "init-flow"))
    return FlowNet(spec=spec, params=params, conditional=conditional, k=k, time_scale=time_scale)
