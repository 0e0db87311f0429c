"""Gap, boundary, and NN-distance reducers."""

import numpy as np
import pytest

from guideflow.analysis import (
    BoundaryStats,
    GapReport,
    Hyperplane,
    boundary_stats,
    boundary_stats_to_csv,
    decomposition_gap,
    gap_report_to_csv,
    mean_nn_distance,
    nn_distance_table,
    nn_table_to_csv,
    pairwise_gap,
)
from guideflow.classifier import make_classifier
from guideflow.datasets import Dataset, gen_gaussian_1d
from guideflow.diffusion import NoiseSchedule, make_denoiser
from guideflow.errors import ConfigError
from guideflow.flow import NnIndex, build_class_indexes, make_flow
from guideflow.guidance import GuidanceConfig, GuidanceMode, NoiseBank, TrajectoryBatch, sample_guided
from guideflow.rng import stream


def small_schedule(T=25):
    return NoiseSchedule.linear(T, 0.05, 0.5)


def _batch(states, scale=1.0):
    T = states.shape[0] - 1
    return TrajectoryBatch(
        ts=np.arange(T, -1, -1),
        states=states,
        config=GuidanceConfig(GuidanceMode.VANILLA, scale, 0),
        seed=0,
    )


def test_self_comparison_gap_is_zero():
    rng = stream(0, "gap")
    states = rng.standard_normal((11, 6, 1))
    gap = pairwise_gap(_batch(states), _batch(states.copy()))
    assert np.array_equal(gap, np.zeros((11, 6)))


def test_gap_requires_matching_shapes():
    rng = stream(1, "gap2")
    a = _batch(rng.standard_normal((5, 3, 1)))
    b = _batch(rng.standard_normal((5, 4, 1)))
    with pytest.raises(ConfigError):
        pairwise_gap(a, b)


def test_decomposition_gap_shares_initial_noise():
    sched = small_schedule()
    vanilla = make_denoiser(
        1, sched, conditional=True, hidden_dims=(16,), time_embed_dim=8,
        class_embed_dim=8, seed=2,
    )
    uncond = make_denoiser(1, sched, conditional=False, hidden_dims=(16,), time_embed_dim=8, seed=3)
    clf = make_classifier("linear", 1, sched, seed=4)
    report = decomposition_gap(vanilla, uncond, clf, n_chains=20, seed=5)
    assert report.mean.shape == (sched.T + 1,)
    assert report.mean[0] == 0.0  # identical x_T before any model step
    assert report.std[0] == 0.0
    assert report.n_chains == 40  # pooled over both classes
    assert np.all(report.mean >= 0.0)
    again = decomposition_gap(vanilla, uncond, clf, n_chains=20, seed=5)
    assert np.array_equal(report.mean, again.mean)


def test_boundary_distance_trivials():
    plane = Hyperplane((1.0,))
    assert plane.distance(np.array([[0.0]]))[0] == 0.0
    assert plane.distance(np.array([[0.6]]))[0] == pytest.approx(0.6)
    plane2 = Hyperplane((0.0, 2.0))  # non-unit normal is normalized
    assert plane2.distance(np.array([[5.0, -1.5]]))[0] == pytest.approx(1.5)
    with pytest.raises(ConfigError):
        Hyperplane((0.0, 0.0)).distance(np.zeros((1, 2)))


def test_boundary_stats_final_and_min():
    states = np.array(
        [
            [[2.0], [-3.0]],
            [[0.5], [-0.25]],
            [[1.0], [-2.0]],
        ]
    )
    stats = boundary_stats(_batch(states), Hyperplane((1.0,)))
    assert np.array_equal(stats.final_distances, [1.0, 2.0])
    assert np.array_equal(stats.min_distances, [0.5, 0.25])
    assert stats.mean_final == 1.5


def test_mean_nn_distance_zero_for_real_points():
    rng = stream(6, "nn")
    pts = rng.standard_normal((100, 2))
    index = NnIndex(pts)
    sq, unsq = mean_nn_distance(index, pts[:20])
    assert sq < 1e-9
    # the unsquared mean sits at the sqrt of the cancellation floor
    assert unsq < 1e-7


def test_nn_distance_table_identity_flow_keeps_columns_equal():
    rng = stream(7, "table")
    real_pts = np.concatenate([rng.standard_normal((80, 2)) + 2, rng.standard_normal((80, 2)) - 2])
    real = Dataset(real_pts, np.repeat([0, 1], 80))
    samples = Dataset(real_pts + 0.05, np.repeat([0, 1], 80))
    zero_flow = make_flow(2, conditional=True, num_classes=2, k=1, hidden_dims=(8,),
                          time_embed_dim=4, class_embed_dim=4, seed=8)
    zero_flow.params.values[...] = 0.0
    table = nn_distance_table({1.0: samples}, real, flows_k1=zero_flow, flows_k20=None, n_steps=4)
    assert len(table.rows) == 2
    for row in table.rows:
        assert row.post_k1_sq == pytest.approx(row.pre_sq)  # v = 0 moves nothing
        assert row.post_k20_sq is None
        assert row.pre_sq > 0.0
        assert row.pre == pytest.approx(np.sqrt(row.pre_sq), rel=0.5)
    assert table.cell(0, 1.0).n_samples == 80


def test_nn_distance_table_real_samples_give_zero_pre():
    rng = stream(9, "table2")
    pts = rng.standard_normal((60, 1))
    real = Dataset(pts, np.repeat([0, 1], 30))
    table = nn_distance_table({2.0: real}, real, None, None)
    for row in table.rows:
        assert row.pre_sq < 1e-9


def test_reports_serialize(tmp_path):
    report = GapReport(
        ts=np.array([2, 1, 0]), mean=np.array([0.0, 0.1, 0.2]),
        std=np.array([0.0, 0.01, 0.02]), n_chains=10, seed=0,
    )
    gap_path = tmp_path / "gap.csv"
    gap_report_to_csv(gap_path, report)
    lines = gap_path.read_text().splitlines()
    assert lines[0] == "t,mean,std" and len(lines) == 4

    stats = BoundaryStats(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
    bpath = tmp_path / "boundary.csv"
    boundary_stats_to_csv(bpath, {1.0: stats})
    assert bpath.read_text().splitlines()[0] == "scale,mean_final,se_final,mean_min,n_chains"

    rng = stream(10, "ser")
    pts = rng.standard_normal((40, 1))
    real = Dataset(pts, np.repeat([0, 1], 20))
    table = nn_distance_table({1.0: real}, real, None, None)
    tpath = tmp_path / "table.csv"
    nn_table_to_csv(tpath, table)
    header = tpath.read_text().splitlines()[0]
    assert header == "class,scale,n,pre_sq,post_k1_sq,post_k20_sq,pre,post_k1,post_k20"
