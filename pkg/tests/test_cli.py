"""CLI pipeline: file formats, determinism, exit codes."""

import json
import os

import numpy as np
import pytest

from guideflow.cli import main
from guideflow.config import RunConfig, config_hash, dump_config, load_config, set_key
from guideflow.datasets import read_dataset_csv
from guideflow.errors import ConfigError

# settings small enough that the whole pipeline runs in seconds; T=20 needs a
# wide beta range for the terminal marginal to be near-white
TINY = [
    "--set", "schedule.T=20",
    "--set", "schedule.beta_start=0.1",
    "--set", "schedule.beta_end=0.5",
    "--set", "model.hidden_dims=16,16",
    "--set", "model.time_embed_dim=8",
    "--set", "model.class_embed_dim=8",
    "--set", "train.denoiser_steps=60",
    "--set", "train.classifier_steps=60",
    "--set", "train.flow_steps=60",
    "--set", "train.batch_size=64",
    "--set", "train.learning_rate=0.001",
    "--set", "train.flow_learning_rate=0.001",
    "--set", "data.n_per_class=300",
    "--set", "postprocess.ode_steps=8",
]


def run(*argv):
    return main(list(argv))


def test_gen_data_defaults_shape(tmp_path):
    out = str(tmp_path / "run")
    assert run("gen-data", "--out", out, "--seed", "1") == 0
    ds = read_dataset_csv(os.path.join(out, "data", "gaussian1d.csv"))
    assert len(ds) == 20000  # 10k per class by default
    assert set(np.unique(ds.labels)) == {0, 1}
    manifest = json.loads(open(os.path.join(out, "data", "gaussian1d.csv.manifest.json")).read())
    assert manifest["command"] == "gen-data"
    assert manifest["seed"] == 1
    assert list(manifest["outputs"]) == [os.path.join("data", "gaussian1d.csv")]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny end-to-end run shared by the CLI assertions."""
    out = str(tmp_path_factory.mktemp("cli") / "run")
    args = TINY + ["--out", out, "--seed", "3"]
    assert run("gen-data", *args) == 0
    assert run("train", "--target", "denoiser-cfg", *args) == 0
    assert run("train", "--target", "denoiser-uncond", *args) == 0
    assert run("train", "--target", "classifier", *args) == 0
    ckpt = os.path.join(out, "ckpt", "denoiser-cfg.ckpt")
    assert run(
        "sample", "--ckpt", ckpt, "--mode", "cfg", "--scale", "1.0", "--n", "40",
        "--noise-bank", "7", "--trajectories", *args,
    ) == 0
    assert run(
        "sample", "--ckpt", ckpt, "--mode", "vanilla", "--scale", "1.0", "--n", "40",
        "--noise-bank", "7", *args,
    ) == 0
    assert run(
        "train", "--target", "flow", "--k", "2", "--name", "flow-k2",
        "--samples", os.path.join(out, "samples", "cfg-w1.csv"), *args,
    ) == 0
    assert run(
        "postprocess", "--samples", os.path.join(out, "samples", "cfg-w1.csv"),
        "--flow", os.path.join(out, "ckpt", "flow-k2.ckpt"), *args,
    ) == 0
    return out, args


def test_cfg_w1_and_vanilla_sample_files_identical(pipeline):
    out, _ = pipeline
    cfg_bytes = open(os.path.join(out, "samples", "cfg-w1.csv"), "rb").read()
    vanilla_bytes = open(os.path.join(out, "samples", "vanilla-w1.csv"), "rb").read()
    assert cfg_bytes == vanilla_bytes


def test_sample_outputs_n_per_class(pipeline):
    out, _ = pipeline
    ds = read_dataset_csv(os.path.join(out, "samples", "cfg-w1.csv"))
    assert len(ds) == 80
    assert int(np.sum(ds.labels == 0)) == 40
    assert os.path.exists(os.path.join(out, "samples", "cfg-w1-traj-c0.csv"))
    assert os.path.exists(os.path.join(out, "samples", "cfg-w1-traj-c1.csv"))


def test_postprocess_output(pipeline):
    out, _ = pipeline
    moved = read_dataset_csv(os.path.join(out, "samples", "cfg-w1-post-k2.csv"))
    raw = read_dataset_csv(os.path.join(out, "samples", "cfg-w1.csv"))
    assert len(moved) == len(raw)
    assert np.array_equal(moved.labels, raw.labels)


def test_analyze_gap_and_nn_table(pipeline):
    out, args = pipeline
    assert run(
        "analyze", "--analysis", "gap",
        "--vanilla", os.path.join(out, "ckpt", "denoiser-cfg.ckpt"),
        "--uncond", os.path.join(out, "ckpt", "denoiser-uncond.ckpt"),
        "--classifier", os.path.join(out, "ckpt", "classifier.ckpt"),
        "--n-chains", "20", *args,
    ) == 0
    gap_lines = open(os.path.join(out, "reports", "gap.csv")).read().splitlines()
    assert gap_lines[0] == "t,mean,std"
    assert len(gap_lines) == 22  # header + T+1 steps
    first = gap_lines[1].split(",")
    assert first[0] == "20" and float(first[1]) == 0.0

    assert run(
        "analyze", "--analysis", "nn-table",
        "--data", os.path.join(out, "data", "gaussian1d.csv"),
        "--samples", "1.0=" + os.path.join(out, "samples", "cfg-w1.csv"),
        "--flow-k1", os.path.join(out, "ckpt", "flow-k2.ckpt"), *args,
    ) == 0
    table_lines = open(os.path.join(out, "reports", "nn_table.csv")).read().splitlines()
    assert len(table_lines) == 3


def test_analyze_boundary(pipeline):
    out, args = pipeline
    traj = os.path.join(out, "samples", "cfg-w1-traj-c0.csv")
    assert run(
        "analyze", "--analysis", "boundary", "--trajectories", f"1.0={traj}",
        "--boundary-normal", "1.0", "--emit-plot-data", *args,
    ) == 0
    lines = open(os.path.join(out, "reports", "boundary.csv")).read().splitlines()
    assert len(lines) == 2
    assert os.path.exists(os.path.join(out, "reports", "boundary-final-distances.csv"))


def test_rerun_is_byte_identical(tmp_path):
    outs = []
    for sub in ("a", "b"):
        out = str(tmp_path / sub)
        args = TINY + ["--out", out, "--seed", "5"]
        assert run("gen-data", *args) == 0
        assert run("train", "--target", "denoiser-cfg", *args) == 0
        ckpt = os.path.join(out, "ckpt", "denoiser-cfg.ckpt")
        assert run("sample", "--ckpt", ckpt, "--mode", "cfg", "--scale", "2.0",
                   "--n", "10", *args) == 0
        outs.append(out)
    for rel in (
        os.path.join("data", "gaussian1d.csv"),
        os.path.join("ckpt", "denoiser-cfg.ckpt"),
        os.path.join("samples", "cfg-w2.csv"),
        os.path.join("samples", "cfg-w2.csv.manifest.json"),
    ):
        a = open(os.path.join(outs[0], rel), "rb").read()
        b = open(os.path.join(outs[1], rel), "rb").read()
        assert a == b, f"{rel} differs between identical runs"


def test_exit_codes(tmp_path):
    out = str(tmp_path / "run")
    # missing checkpoint -> data error
    assert run("sample", "--ckpt", str(tmp_path / "nope.ckpt"), "--out", out) == 3
    # unknown config key -> configuration error
    assert run("gen-data", "--set", "data.nope=1", "--out", out) == 2
    # malformed --set -> configuration error
    assert run("gen-data", "--set", "data.kind", "--out", out) == 2
    # dataset too small for the batch -> configuration error
    args = TINY + ["--out", out, "--seed", "0", "--set", "data.n_per_class=10"]
    assert run("gen-data", *args) == 0
    assert run("train", "--target", "denoiser-cfg", *args) == 2


def test_config_file_roundtrip(tmp_path):
    cfg = RunConfig()
    set_key(cfg, "data.n_per_class", "123")
    set_key(cfg, "train.batch_size", "32")
    set_key(cfg, "guidance.scales", "1.0,3.5")
    set_key(cfg, "seed", "9")
    path = tmp_path / "run.cfg"
    path.write_text(dump_config(cfg))
    loaded = load_config(path)
    assert loaded.data.n_per_class == 123
    assert loaded.train.batch_size == 32
    assert loaded.guidance.scales == (1.0, 3.5)
    assert loaded.seed == 9
    assert config_hash(loaded) == config_hash(cfg)
    with pytest.raises(ConfigError):
        set_key(cfg, "data.unknown", "1")
    with pytest.raises(ConfigError):
        set_key(cfg, "nosection", "1")


def test_config_file_sections_and_comments(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        "# comment\nseed=4\n[data]\nkind=fractal\n[train]\nbatch_size=64 # inline\n"
    )
    cfg = load_config(path)
    assert cfg.seed == 4
    assert cfg.data.kind == "fractal"
    assert cfg.train.batch_size == 64
