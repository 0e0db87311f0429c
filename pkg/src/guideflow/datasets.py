"""Seeded generators for the two-class toy datasets.

Two families:

* 1D two-component Gaussians at +/- mean with a shared std (class 0 on
  the positive side, class 1 on the negative side).
* A 2D fractal per class: a depth-6 binary tree of branches (127 per
  class), 8 anisotropic Gaussians placed uniformly along every branch
  (1016 components per class), sampled with branch-dependent counts.

Everything is a pure function of (config, seed). Gaussian draws use
Box-Muller with the Cholesky factor of the covariance, one splittable
stream per entity, so regenerating one branch or component never shifts
any other draw.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .rng import standard_normal, stream

FRACTAL_DEPTH = 6
FRACTAL_BRANCHES = 2**(FRACTAL_DEPTH + 1) - 1  # 127 per class
GAUSSIANS_PER_BRANCH = 8
FRACTAL_ROOT_LENGTH = 1.2
FRACTAL_ROOT_ORIENTATION = {0: 0.25 * np.pi, 1: 1.75 * np.pi}


@dataclass(frozen=True)
class LabeledPoint:
    x: np.ndarray
    label: int


@dataclass
class Dataset:
    """Column-major view of a labeled point cloud."""

    points: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    num_classes: int = 2

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise DataError(f"points must be 2-d, got shape {self.points.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.points.shape[0],):
            raise DataError("labels do not match point count")
        if self.points.shape[0] and self.labels.max(initial=0) >= self.num_classes:
            raise DataError("label out of range")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def of_class(self, label: int) -> np.ndarray:
        return self.points[self.labels == label]

    def __getitem__(self, i: int) -> LabeledPoint:
        return LabeledPoint(self.points[i], int(self.labels[i]))


def gen_gaussian_1d(mean: float, std: float, n_per_class: int, seed: int) -> Dataset:
    """Two 1D Gaussians: class 0 ~ N(+mean, std^2), class 1 ~ N(-mean, std^2)."""
    if std <= 0:
        raise ConfigError("std must be positive")
    if n_per_class <= 0:
        raise ConfigError("n_per_class must be positive")
    blocks = []
    for label, center in ((0, +mean), (1, -mean)):
        rng = stream(seed, "gaussian1d", label)
        z = standard_normal(rng, (n_per_class, 1))
        blocks.append(center + std * z)
    points = np.concatenate(blocks, axis=0)
    labels = np.repeat(np.array([0, 1], dtype=np.int64), n_per_class)
    return Dataset(points, labels)


@dataclass(frozen=True)
class FractalBranch:
    index: int  # 1-based heap index: children of i are 2i and 2i+1
    start: np.ndarray
    length: float
    orientation: float  # wrapped to [0, 2*pi)

    @property
    def end(self) -> np.ndarray:
        return self.start + self.length * np.array(
            [math.cos(self.orientation), math.sin(self.orientation)]
        )


def build_fractal_tree(class_id: int, seed: int) -> list[FractalBranch]:
    """Grow the depth-6 branch tree for one class (127 branches).

    Child k of branch i (k in {2i, 2i+1}) starts at i's endpoint with
      length      l_i * (1 - 0.4 * xi),          xi  ~ U(0.5, 0.8)
      orientation o_i + (-1)^(k+1) * pi * (1 / (2.8 * exp(depth(k)/4)) + xi1 * xi2),
                  xi1 ~ Bernoulli(0.5), xi2 ~ U(0, 0.05)
    where depth(k) = floor(log2 k). Draws for child k come from the
    stream keyed by (class, k), one child at a time.
    """
    if class_id not in FRACTAL_ROOT_ORIENTATION:
        raise ConfigError(f"class_id must be 0 or 1, got {class_id}")
    branches: dict[int, FractalBranch] = {
        1: FractalBranch(
            index=1,
            start=np.zeros(2),
            length=FRACTAL_ROOT_LENGTH,
            orientation=FRACTAL_ROOT_ORIENTATION[class_id],
        )
    }
    for i in range(1, 2**FRACTAL_DEPTH):
        parent = branches[i]
        for k in (2 * i, 2 * i + 1):
            rng = stream(seed, f"fractal-branch-c{class_id}", k)
            xi = rng.uniform(0.5, 0.8)
            xi1 = float(rng.integers(0, 2))
            xi2 = rng.uniform(0.0, 0.05)
            depth = k.bit_length() - 1
            swing = math.pi * (1.0 / (2.8 * math.exp(depth / 4.0)) + xi1 * xi2)
            orientation = (parent.orientation + (-1.0) ** (k + 1) * swing) % (2.0 * math.pi)
            branches[k] = FractalBranch(
                index=k,
                start=parent.end,
                length=parent.length * (1.0 - 0.4 * xi),
                orientation=orientation,
            )
    return [branches[i] for i in range(1, FRACTAL_BRANCHES + 1)]


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray
    branch_index: int  # 1-based heap index of the owning branch
    component_index: int  # global index in [0, 1016)


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def place_gaussians(branches: list[FractalBranch]) -> list[GaussianComponent]:
    """8 Gaussians per branch, means at fractions (j+0.5)/8 along it.

    Component i (ordered by branch position then slot) gets base
    covariance diag(0.005 * exp(-i/30), 0.003 * exp(-i/25)) rotated by
    the owning branch's orientation.
    """
    if len(branches) != FRACTAL_BRANCHES:
        raise ConfigError(f"expected {FRACTAL_BRANCHES} branches, got {len(branches)}")
    components = []
    for pos, branch in enumerate(branches):
        direction = branch.end - branch.start
        rot = _rotation(branch.orientation)
        for j in range(GAUSSIANS_PER_BRANCH):
            i = pos * GAUSSIANS_PER_BRANCH + j
            base = np.diag([0.005 * math.exp(-i / 30.0), 0.003 * math.exp(-i / 25.0)])
            components.append(
                GaussianComponent(
                    mean=branch.start + ((j + 0.5) / GAUSSIANS_PER_BRANCH) * direction,
                    covariance=rot @ base @ rot.T,
                    branch_index=branch.index,
                    component_index=i,
                )
            )
    return components


def fractal_branch_count(branch_pos: int) -> int:
    """Samples drawn from each Gaussian of the branch at 0-based position."""
    return math.floor(1000.0 * math.exp(-branch_pos / 100.0))


def sample_fractal(components: list[GaussianComponent], class_id: int, seed: int) -> Dataset:
    """Draw the class point cloud: branch at position p contributes
    8 * floor(1000 * exp(-p/100)) points, split evenly over its Gaussians."""
    blocks = []
    for comp in components:
        n = fractal_branch_count(comp.component_index // GAUSSIANS_PER_BRANCH)
        rng = stream(seed, f"fractal-sample-c{class_id}", comp.component_index)
        z = standard_normal(rng, (n, 2))
        chol = np.linalg.cholesky(comp.covariance)
        blocks.append(comp.mean + z @ chol.T)
    points = np.concatenate(blocks, axis=0)
    labels = np.full(points.shape[0], class_id, dtype=np.int64)
    return Dataset(points, labels)


def make_fractal_dataset(seed: int) -> Dataset:
    """Both classes of the fractal benchmark in one labeled dataset."""
    parts = []
    for class_id in (0, 1):
        branches = build_fractal_tree(class_id, seed)
        components = place_gaussians(branches)
        parts.append(sample_fractal(components, class_id, seed))
    points = np.concatenate([p.points for p in parts], axis=0)
    labels = np.concatenate([p.labels for p in parts], axis=0)
    return Dataset(points, labels)


def write_dataset_csv(path, dataset: Dataset) -> None:
    """CSV with header ``x0[,x1],label``; floats printed shortest-roundtrip."""
    cols = [f"x{i}" for i in range(dataset.dim)] + ["label"]
    lines = [",".join(cols)]
    for row, label in zip(dataset.points, dataset.labels):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(label))]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset_csv(path) -> Dataset:
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[-1] != "label" or any(
            c != f"x{i}" for i, c in enumerate(header[:-1])
        ):
            raise DataError(f"bad dataset header in {path}: {header}")
        dim = len(header) - 1
        points, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected {dim + 1} fields")
            try:
                points.append([float(v) for v in parts[:-1]])
                labels.append(int(parts[-1]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not points:
        raise DataError(f"dataset file {path} has no rows")
    return Dataset(np.array(points), np.array(labels))
