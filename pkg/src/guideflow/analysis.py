"""Measurement suite: decomposition gap, boundary repulsion, NN-distance tables.

All reducers are pure functions of their sample/trajectory inputs and are
bit-reproducible under fixed seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierNet
from .datasets import Dataset
from .diffusion import DenoiserNet
from .errors import ConfigError
from .flow import FlowNet, NnIndex, build_class_indexes, nearest_neighbors, postprocess
from .guidance import (
    GuidanceConfig,
    GuidanceMode,
    NoiseBank,
    TrajectoryBatch,
    sample_guided,
)


@dataclass
class GapReport:
    """Per-step statistics of |vanilla - decomposed| over paired chains."""

    ts: np.ndarray  # (T + 1,), T down to 0
    mean: np.ndarray
    std: np.ndarray
    n_chains: int
    seed: int
    dataset_tag: str = ""

    @property
    def terminal_mean(self) -> float:
        return float(self.mean[-1])

    @property
    def terminal_se(self) -> float:
        return float(self.std[-1] / np.sqrt(self.n_chains))


def pairwise_gap(a: TrajectoryBatch, b: TrajectoryBatch) -> np.ndarray:
    """Euclidean per-step distances between index-paired chains: (T+1, n)."""
    if a.states.shape != b.states.shape:
        raise ConfigError("trajectory batches have different shapes")
    return np.linalg.norm(a.states - b.states, axis=2)


def decomposition_gap(
    vanilla_net: DenoiserNet,
    uncond_net: DenoiserNet,
    classifier: ClassifierNet,
    n_chains: int,
    seed: int,
    class_ids=(0, 1),
    dataset_tag: str = "",
) -> GapReport:
    """Vanilla conditional sampling vs the classifier-guidance decomposition
    at scale 1, on identical noise, pooled over chains and classes."""
    if vanilla_net.data_dim != uncond_net.data_dim:
        raise ConfigError("model data dims differ")
    if vanilla_net.schedule.T != uncond_net.schedule.T:
        raise ConfigError("model schedules differ")
    gaps = []
    ts = None
    for c in class_ids:
        bank = NoiseBank.draw(seed, n_chains, vanilla_net.schedule.T, vanilla_net.data_dim, index=c)
        _, traj_v = sample_guided(
            vanilla_net,
            GuidanceConfig(GuidanceMode.VANILLA, 1.0, c),
            n_chains,
            seed,
            noise_bank=bank,
            record_trajectories=True,
        )
        _, traj_d = sample_guided(
            uncond_net,
            GuidanceConfig(GuidanceMode.CLASSIFIER, 1.0, c),
            n_chains,
            seed,
            classifier=classifier,
            noise_bank=bank,
            record_trajectories=True,
        )
        gaps.append(pairwise_gap(traj_v, traj_d))
        ts = traj_v.ts
    pooled = np.concatenate(gaps, axis=1)
    return GapReport(
        ts=ts,
        mean=pooled.mean(axis=1),
        std=pooled.std(axis=1),
        n_chains=pooled.shape[1],
        seed=seed,
        dataset_tag=dataset_tag,
    )


@dataclass(frozen=True)
class Hyperplane:
    """Decision boundary {x : <x, normal> = offset}."""

    normal: tuple[float, ...]
    offset: float = 0.0

    def distance(self, x: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm == 0.0:
            raise ConfigError("hyperplane normal must be non-zero")
        return np.abs(np.asarray(x, dtype=np.float64) @ n - self.offset) / norm


@dataclass
class BoundaryStats:
    final_distances: np.ndarray
    min_distances: np.ndarray

    @property
    def mean_final(self) -> float:
        return float(self.final_distances.mean())

    @property
    def se_final(self) -> float:
        return float(self.final_distances.std() / np.sqrt(self.final_distances.size))

    @property
    def mean_min(self) -> float:
        return float(self.min_distances.mean())


def boundary_stats(batch: TrajectoryBatch, boundary: Hyperplane) -> BoundaryStats:
    """Final and per-trajectory minimum distances to the boundary."""
    dists = np.stack([boundary.distance(batch.states[s]) for s in range(batch.states.shape[0])])
    return BoundaryStats(final_distances=dists[-1], min_distances=dists.min(axis=0))


@dataclass
class NnRow:
    class_id: int
    scale: float
    n_samples: int
    pre_sq: float
    post_k1_sq: float | None
    post_k20_sq: float | None
    pre: float
    post_k1: float | None
    post_k20: float | None


@dataclass
class NnDistanceTable:
    rows: list[NnRow] = field(default_factory=list)
    seed: int = 0

    def cell(self, class_id: int, scale: float) -> NnRow:
        for row in self.rows:
            if row.class_id == class_id and row.scale == scale:
                return row
        raise KeyError((class_id, scale))


def mean_nn_distance(index: NnIndex, points: np.ndarray) -> tuple[float, float]:
    """(mean squared, mean unsquared) distance to the nearest index point."""
    _, d2 = nearest_neighbors(index, points, 1)
    d2 = d2[:, 0]
    return float(d2.mean()), float(np.sqrt(d2).mean())


def _resolve_flow(flows, scale: float):
    if flows is None:
        return None
    if isinstance(flows, FlowNet):
        return flows
    return flows.get(scale)


def nn_distance_table(
    samples_by_scale: dict[float, Dataset],
    real: Dataset,
    flows_k1=None,
    flows_k20=None,
    n_steps: int = 50,
    seed: int = 0,
) -> NnDistanceTable:
    """Per (class, scale): mean NN distance for raw samples and after the
    k=1 and k=20 postprocessors.

    ``flows_k1`` / ``flows_k20`` may be a dict scale -> FlowNet, a single
    one-for-all FlowNet, or None to skip that column. Distances are
    squared Euclidean to the nearest same-class real point; the unsquared
    means are reported alongside.
    """
    indexes = build_class_indexes(real)
    table = NnDistanceTable(seed=seed)
    for scale in sorted(samples_by_scale):
        samples = samples_by_scale[scale]
        moved = {}
        for tag, flows in (("k1", flows_k1), ("k20", flows_k20)):
            net = _resolve_flow(flows, scale)
            moved[tag] = postprocess(samples, net, n_steps) if net is not None else None
        for class_id in range(real.num_classes):
            mask = samples.labels == class_id
            pre_sq, pre = mean_nn_distance(indexes[class_id], samples.points[mask])
            row = NnRow(
                class_id=class_id,
                scale=scale,
                n_samples=int(mask.sum()),
                pre_sq=pre_sq,
                post_k1_sq=None,
                post_k20_sq=None,
                pre=pre,
                post_k1=None,
                post_k20=None,
            )
            if moved["k1"] is not None:
                row.post_k1_sq, row.post_k1 = mean_nn_distance(
                    indexes[class_id], moved["k1"].points[mask]
                )
            if moved["k20"] is not None:
                row.post_k20_sq, row.post_k20 = mean_nn_distance(
                    indexes[class_id], moved["k20"].points[mask]
                )
            table.rows.append(row)
    return table


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def gap_report_to_csv(path, report: GapReport) -> None:
    lines = ["t,mean,std"]
    for t, m, s in zip(report.ts, report.mean, report.std):
        lines.append(f"{int(t)},{float(m)!r},{float(s)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def boundary_stats_to_csv(path, stats_by_scale: dict[float, BoundaryStats]) -> None:
    lines = ["scale,mean_final,se_final,mean_min,n_chains"]
    for scale in sorted(stats_by_scale):
        s = stats_by_scale[scale]
        lines.append(
            f"{float(scale)!r},{s.mean_final!r},{s.se_final!r},{s.mean_min!r},"
            f"{s.final_distances.size}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def nn_table_to_csv(path, table: NnDistanceTable) -> None:
    lines = ["class,scale,n,pre_sq,post_k1_sq,post_k20_sq,pre,post_k1,post_k20"]
    for r in table.rows:
        lines.append(
            ",".join(
                [
                    str(r.class_id),
                    repr(float(r.scale)),
                    str(r.n_samples),
                    _fmt(r.pre_sq),
                    _fmt(r.post_k1_sq),
                    _fmt(r.post_k20_sq),
                    _fmt(r.pre),
                    _fmt(r.post_k1),
                    _fmt(r.post_k20),
                ]
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
