"""Operator CLI: gen-data, train, sample, postprocess, analyze.

Every command is driven by a RunConfig (defaults, optional config file,
``--set section.key=value`` overrides). Outputs are written atomically
(temp file + rename) under ``<out>/{data,ckpt,samples,reports}`` and each
primary output gets a ``.manifest.json`` recording the config hash, the
seed, and sha256 checksums of inputs and outputs. Reruns with the same
config and seed are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import analysis, checkpoint, datasets, flow, guidance
from .classifier import ClassifierNet, make_classifier, train_classifier
from .config import RunConfig, config_hash, load_config, set_key
from .diffusion import DenoiserNet, NoiseSchedule, make_denoiser, train_denoiser
from .errors import ConfigError, DataError, GuideflowError
from .flow import FlowNet, PairSampler, build_class_indexes, make_flow, postprocess, train_flow
from .guidance import GuidanceConfig, GuidanceMode, NoiseBank, sample_guided
from .optim import make_ema, make_optimizer

TRAIN_TARGETS = ("denoiser-cond", "denoiser-uncond", "denoiser-cfg", "classifier", "flow")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def atomic_write(path, writer) -> None:
    tmp = f"{path}.tmp"
    writer(tmp)
    os.replace(tmp, path)


def _write_manifest(primary_output, command: str, cfg: RunConfig, args: dict, inputs, outputs):
    # paths are recorded relative to the run root so identical runs in
    # different directories stay byte-identical
    rel = lambda p: os.path.relpath(str(p), cfg.out)
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "args": args,
        "inputs": {rel(p): _sha256(p) for p in inputs},
        "outputs": {rel(p): _sha256(p) for p in outputs},
    }
    path = f"{primary_output}.manifest.json"
    atomic_write(
        path,
        lambda tmp: open(tmp, "w").write(json.dumps(manifest, sort_keys=True, indent=1) + "\n"),
    )


def _outdir(cfg: RunConfig, sub: str) -> str:
    path = os.path.join(cfg.out, sub)
    os.makedirs(path, exist_ok=True)
    return path


def _schedule(cfg: RunConfig) -> NoiseSchedule:
    return NoiseSchedule.linear(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)


def _load_dataset(path, cfg: RunConfig) -> datasets.Dataset:
    ds = datasets.read_dataset_csv(path)
    if cfg.data.max_points and len(ds) > cfg.data.max_points:
        ds = datasets.Dataset(
            ds.points[: cfg.data.max_points], ds.labels[: cfg.data.max_points], ds.num_classes
        )
    return ds


def cmd_gen_data(cfg: RunConfig, args) -> int:
    if cfg.data.kind == "gaussian1d":
        ds = datasets.gen_gaussian_1d(cfg.data.mean, cfg.data.std, cfg.data.n_per_class, cfg.seed)
    elif cfg.data.kind == "fractal":
        ds = datasets.make_fractal_dataset(cfg.seed)
    else:
        raise ConfigError(f"unknown dataset kind {cfg.data.kind!r}")
    out = os.path.join(_outdir(cfg, "data"), f"{cfg.data.kind}.csv")
    atomic_write(out, lambda tmp: datasets.write_dataset_csv(tmp, ds))
    _write_manifest(out, "gen-data", cfg, {"kind": cfg.data.kind}, [], [out])
    print(f"wrote {out} ({len(ds)} rows, dim {ds.dim})")
    return 0


def _train_denoiser_kind(cfg: RunConfig, ds, conditional: bool, dropout: float) -> DenoiserNet:
    net = make_denoiser(
        data_dim=ds.dim,
        schedule=_schedule(cfg),
        conditional=conditional,
        num_classes=ds.num_classes,
        hidden_dims=cfg.model.hidden_dims,
        activation=cfg.model.activation,
        time_embed_dim=cfg.model.time_embed_dim,
        class_embed_dim=cfg.model.class_embed_dim,
        dropout_prob=dropout,
        time_scale=cfg.model.time_scale,
        seed=cfg.seed,
    )
    opt = make_optimizer(
        cfg.train.optimizer,
        net.params,
        cfg.train.learning_rate,
        weight_decay=cfg.train.weight_decay,
    )
    ema = make_ema(net.params, cfg.train.ema_decay) if cfg.train.ema_decay > 0 else None
    train_denoiser(
        ds, net, opt, cfg.train.denoiser_steps, cfg.train.batch_size, cfg.seed, ema=ema
    )
    if ema is not None:
        net.params = ema.shadow
    return net


def cmd_train(cfg: RunConfig, args) -> int:
    target = args.target
    ckpt_dir = _outdir(cfg, "ckpt")
    name = args.name or target
    out = os.path.join(ckpt_dir, f"{name}.ckpt")
    inputs = []
    if target in ("denoiser-cond", "denoiser-uncond", "denoiser-cfg"):
        data_path = args.data or os.path.join(cfg.out, "data", f"{cfg.data.kind}.csv")
        ds = _load_dataset(data_path, cfg)
        inputs.append(data_path)
        conditional = target != "denoiser-uncond"
        dropout = cfg.train.dropout_prob if target == "denoiser-cfg" else 0.0
        net = _train_denoiser_kind(cfg, ds, conditional, dropout)
        atomic_write(out, lambda tmp: checkpoint.save_denoiser(tmp, net))
    elif target == "classifier":
        data_path = args.data or os.path.join(cfg.out, "data", f"{cfg.data.kind}.csv")
        ds = _load_dataset(data_path, cfg)
        inputs.append(data_path)
        net = make_classifier(
            cfg.model.classifier_kind,
            ds.dim,
            _schedule(cfg),
            num_classes=ds.num_classes,
            hidden_dims=cfg.model.hidden_dims,
            activation=cfg.model.activation,
            time_embed_dim=cfg.model.time_embed_dim,
            time_scale=cfg.model.time_scale,
            seed=cfg.seed,
        )
        opt = make_optimizer(
            cfg.train.optimizer,
            net.params,
            cfg.train.learning_rate,
            weight_decay=cfg.train.weight_decay,
        )
        train_classifier(ds, net, opt, cfg.train.classifier_steps, cfg.train.batch_size, cfg.seed)
        atomic_write(out, lambda tmp: checkpoint.save_classifier(tmp, net))
    elif target == "flow":
        if not args.samples:
            raise ConfigError("train --target flow needs at least one --samples file")
        data_path = args.data or os.path.join(cfg.out, "data", f"{cfg.data.kind}.csv")
        real = _load_dataset(data_path, cfg)
        inputs.append(data_path)
        parts = [datasets.read_dataset_csv(p) for p in args.samples]
        inputs.extend(args.samples)
        if len({p.dim for p in parts} | {real.dim}) != 1:
            raise ConfigError("sample files and real data have mixed dimensions")
        generated = datasets.Dataset(
            np.concatenate([p.points for p in parts]),
            np.concatenate([p.labels for p in parts]),
            num_classes=real.num_classes,
        )
        k = args.k or cfg.postprocess.k
        sampler = PairSampler(generated, build_class_indexes(real), k)
        net = make_flow(
            data_dim=real.dim,
            conditional=True,
            num_classes=real.num_classes,
            k=k,
            hidden_dims=cfg.model.hidden_dims,
            activation=cfg.model.activation,
            time_embed_dim=cfg.model.time_embed_dim,
            class_embed_dim=cfg.model.class_embed_dim,
            time_scale=cfg.model.time_scale,
            seed=cfg.seed,
        )
        opt = make_optimizer(
            cfg.train.optimizer,
            net.params,
            cfg.train.flow_learning_rate,
            weight_decay=cfg.train.weight_decay,
        )
        train_flow(sampler, net, opt, cfg.train.flow_steps, cfg.train.batch_size, cfg.seed)
        atomic_write(out, lambda tmp: checkpoint.save_flow(tmp, net))
    else:
        raise ConfigError(f"unknown train target {target!r}")
    _write_manifest(out, "train", cfg, {"target": target, "name": name}, inputs, [out])
    print(f"wrote {out}")
    return 0


def _load_denoiser(path) -> DenoiserNet:
    net = checkpoint.load_model(path)
    if not isinstance(net, DenoiserNet):
        raise ConfigError(f"{path} is not a denoiser checkpoint")
    return net


def cmd_sample(cfg: RunConfig, args) -> int:
    net = _load_denoiser(args.ckpt)
    mode = GuidanceMode(args.mode)
    classifier = None
    if mode == GuidanceMode.CLASSIFIER:
        if not args.classifier:
            raise ConfigError("sample --mode cg needs --classifier")
        classifier = checkpoint.load_model(args.classifier)
        if not isinstance(classifier, ClassifierNet):
            raise ConfigError(f"{args.classifier} is not a classifier checkpoint")
    n = args.n or cfg.guidance.n_per_class
    bank_seed = cfg.seed if args.noise_bank is None else args.noise_bank
    num_classes = net.spec.num_classes if net.conditional else 2
    points, labels, trajs = [], [], []
    for class_id in range(num_classes):
        bank = NoiseBank.draw(bank_seed, n, net.schedule.T, net.data_dim, index=class_id)
        config = GuidanceConfig(mode, args.scale, class_id)
        x0, batch = sample_guided(
            net,
            config,
            n,
            cfg.seed,
            classifier=classifier,
            noise_bank=bank,
            record_trajectories=args.trajectories,
        )
        points.append(x0)
        labels.append(np.full(n, class_id, dtype=np.int64))
        trajs.append(batch)
    ds = datasets.Dataset(np.concatenate(points), np.concatenate(labels), num_classes)
    name = args.name or f"{mode.value}-w{args.scale:g}"
    out_dir = _outdir(cfg, "samples")
    out = os.path.join(out_dir, f"{name}.csv")
    atomic_write(out, lambda tmp: datasets.write_dataset_csv(tmp, ds))
    outputs = [out]
    if args.trajectories:
        for class_id, batch in enumerate(trajs):
            tpath = os.path.join(out_dir, f"{name}-traj-c{class_id}.csv")
            atomic_write(tpath, lambda tmp, b=batch: guidance.write_trajectories_csv(tmp, b))
            outputs.append(tpath)
    inputs = [args.ckpt] + ([args.classifier] if args.classifier else [])
    _write_manifest(
        out,
        "sample",
        cfg,
        {"mode": mode.value, "scale": args.scale, "n": n, "noise_bank": bank_seed},
        inputs,
        outputs,
    )
    print(f"wrote {out}")
    return 0


def cmd_postprocess(cfg: RunConfig, args) -> int:
    samples = datasets.read_dataset_csv(args.samples)
    net = checkpoint.load_model(args.flow)
    if not isinstance(net, FlowNet):
        raise ConfigError(f"{args.flow} is not a flow checkpoint")
    if net.data_dim != samples.dim:
        raise ConfigError(
            f"flow dim {net.data_dim} does not match samples dim {samples.dim}"
        )
    moved = postprocess(samples, net, cfg.postprocess.ode_steps, cfg.postprocess.ode_method)
    base = os.path.splitext(os.path.basename(args.samples))[0]
    out = os.path.join(_outdir(cfg, "samples"), args.name or f"{base}-post-k{net.k}.csv")
    atomic_write(out, lambda tmp: datasets.write_dataset_csv(tmp, moved))
    _write_manifest(
        out,
        "postprocess",
        cfg,
        {"ode_steps": cfg.postprocess.ode_steps, "ode_method": cfg.postprocess.ode_method},
        [args.samples, args.flow],
        [out],
    )
    print(f"wrote {out}")
    return 0


def _parse_scale_map(pairs, what: str):
    """['1.0=path', ...] -> dict, or a single bare path -> one-for-all."""
    if pairs is None:
        return None
    if len(pairs) == 1 and "=" not in pairs[0]:
        return pairs[0]
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"{what} expects SCALE=PATH, got {item!r}")
        scale, path = item.split("=", 1)
        out[float(scale)] = path
    return out


def cmd_analyze(cfg: RunConfig, args) -> int:
    reports = _outdir(cfg, "reports")
    if args.analysis == "gap":
        vanilla = _load_denoiser(args.vanilla)
        uncond = _load_denoiser(args.uncond)
        classifier = checkpoint.load_model(args.classifier)
        if not isinstance(classifier, ClassifierNet):
            raise ConfigError(f"{args.classifier} is not a classifier checkpoint")
        n = args.n_chains or cfg.guidance.n_per_class
        report = analysis.decomposition_gap(
            vanilla, uncond, classifier, n, cfg.seed, dataset_tag=cfg.data.kind
        )
        out = os.path.join(reports, "gap.csv")
        atomic_write(out, lambda tmp: analysis.gap_report_to_csv(tmp, report))
        _write_manifest(
            out,
            "analyze",
            cfg,
            {"analysis": "gap", "n_chains": n},
            [args.vanilla, args.uncond, args.classifier],
            [out],
        )
        print(
            f"wrote {out} (terminal gap {report.terminal_mean:.6g} "
            f"+/- {report.terminal_se:.2g} SE, t=T gap {report.mean[0]:.6g})"
        )
        return 0
    if args.analysis == "boundary":
        if not args.trajectories:
            raise ConfigError("analyze boundary needs --trajectories files")
        normal = tuple(float(v) for v in args.boundary_normal.split(","))
        plane = analysis.Hyperplane(normal, args.boundary_offset)
        stats_by_scale = {}
        plot_rows = []
        for item in args.trajectories:
            if "=" not in item:
                raise ConfigError("analyze boundary expects SCALE=TRAJ_CSV")
            scale_s, path = item.split("=", 1)
            scale = float(scale_s)
            ts, states = guidance.read_trajectories_csv(path)
            batch = guidance.TrajectoryBatch(
                ts, states, GuidanceConfig(GuidanceMode.VANILLA, scale, 0), cfg.seed
            )
            prev = stats_by_scale.get(scale)
            stats = analysis.boundary_stats(batch, plane)
            if prev is not None:
                stats = analysis.BoundaryStats(
                    np.concatenate([prev.final_distances, stats.final_distances]),
                    np.concatenate([prev.min_distances, stats.min_distances]),
                )
            stats_by_scale[scale] = stats
        out = os.path.join(reports, "boundary.csv")
        atomic_write(out, lambda tmp: analysis.boundary_stats_to_csv(tmp, stats_by_scale))
        outputs = [out]
        if args.emit_plot_data:
            plot = os.path.join(reports, "boundary-final-distances.csv")

            def write_plot(tmp):
                lines = ["scale,chain,final_distance"]
                for scale in sorted(stats_by_scale):
                    for i, v in enumerate(stats_by_scale[scale].final_distances):
                        lines.append(f"{float(scale)!r},{i},{float(v)!r}")
                with open(tmp, "w") as fh:
                    fh.write("\n".join(lines) + "\n")

            atomic_write(plot, write_plot)
            outputs.append(plot)
        _write_manifest(
            out,
            "analyze",
            cfg,
            {"analysis": "boundary", "normal": args.boundary_normal},
            [item.split("=", 1)[1] for item in args.trajectories],
            outputs,
        )
        print(f"wrote {out}")
        return 0
    if args.analysis == "nn-table":
        if not args.samples:
            raise ConfigError("analyze nn-table needs --samples SCALE=PATH entries")
        real = _load_dataset(args.data, cfg)
        samples_by_scale = {}
        for item in args.samples:
            if "=" not in item:
                raise ConfigError("analyze nn-table expects --samples SCALE=PATH")
            scale_s, path = item.split("=", 1)
            samples_by_scale[float(scale_s)] = datasets.read_dataset_csv(path)
        inputs = [args.data] + [i.split("=", 1)[1] for i in args.samples]

        def load_flows(spec_map):
            if spec_map is None:
                return None
            if isinstance(spec_map, str):
                inputs.append(spec_map)
                net = checkpoint.load_model(spec_map)
                if not isinstance(net, FlowNet):
                    raise ConfigError(f"{spec_map} is not a flow checkpoint")
                return net
            nets = {}
            for scale, path in spec_map.items():
                inputs.append(path)
                net = checkpoint.load_model(path)
                if not isinstance(net, FlowNet):
                    raise ConfigError(f"{path} is not a flow checkpoint")
                nets[scale] = net
            return nets

        flows_k1 = load_flows(_parse_scale_map(args.flow_k1, "--flow-k1"))
        flows_k20 = load_flows(_parse_scale_map(args.flow_k20, "--flow-k20"))
        table = analysis.nn_distance_table(
            samples_by_scale,
            real,
            flows_k1,
            flows_k20,
            cfg.postprocess.ode_steps,
            seed=cfg.seed,
        )
        out = os.path.join(reports, "nn_table.csv")
        atomic_write(out, lambda tmp: analysis.nn_table_to_csv(tmp, table))
        _write_manifest(out, "analyze", cfg, {"analysis": "nn-table"}, inputs, [out])
        print(f"wrote {out}")
        return 0
    raise ConfigError(f"unknown analysis {args.analysis!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guideflow",
        description="Toy diffusion guidance experiments with flow postprocessing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="run output directory")

    p = sub.add_parser("gen-data", help="generate a dataset CSV")
    common(p)

    p = sub.add_parser("train", help="train one model")
    common(p)
    p.add_argument("--target", required=True, choices=TRAIN_TARGETS)
    p.add_argument("--data", help="dataset CSV (default: <out>/data/<kind>.csv)")
    p.add_argument("--samples", action="append", help="generated samples CSV (flow target)")
    p.add_argument("--k", type=int, help="top-k pool size for the flow target")
    p.add_argument("--name", help="checkpoint basename")

    p = sub.add_parser("sample", help="sample with vanilla/cg/cfg guidance")
    common(p)
    p.add_argument("--ckpt", required=True, help="denoiser checkpoint")
    p.add_argument("--mode", default="vanilla", choices=[m.value for m in GuidanceMode])
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--n", type=int, help="chains per class")
    p.add_argument("--classifier", help="classifier checkpoint (cg mode)")
    p.add_argument("--noise-bank", type=int, help="noise bank seed (share across runs)")
    p.add_argument("--trajectories", action="store_true", help="also write trajectory CSVs")
    p.add_argument("--name", help="output basename")

    p = sub.add_parser("postprocess", help="move samples through a trained flow")
    common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--flow", required=True, help="flow checkpoint")
    p.add_argument("--name", help="output basename")

    p = sub.add_parser("analyze", help="gap / boundary / nn-table reports")
    common(p)
    p.add_argument("--analysis", required=True, choices=("gap", "boundary", "nn-table"))
    p.add_argument("--vanilla", help="conditional denoiser checkpoint (gap)")
    p.add_argument("--uncond", help="unconditional denoiser checkpoint (gap)")
    p.add_argument("--classifier", help="classifier checkpoint (gap)")
    p.add_argument("--n-chains", type=int, help="chains per class (gap)")
    p.add_argument("--trajectories", action="append", metavar="SCALE=TRAJ_CSV")
    p.add_argument("--boundary-normal", default="1.0", help="comma-separated normal vector")
    p.add_argument("--boundary-offset", type=float, default=0.0)
    p.add_argument("--data", help="real dataset CSV (nn-table)")
    p.add_argument("--samples", action="append", metavar="SCALE=SAMPLES_CSV")
    p.add_argument("--flow-k1", action="append", metavar="[SCALE=]CKPT")
    p.add_argument("--flow-k20", action="append", metavar="[SCALE=]CKPT")
    p.add_argument("--emit-plot-data", action="store_true")
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "postprocess": cmd_postprocess,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            set_key(cfg, key, value)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        return COMMANDS[args.command](cfg, args)
    except GuideflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
