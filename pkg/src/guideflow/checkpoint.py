"""One checkpoint format for every model kind.

Layout: an ASCII header (format-version line, then key=value lines, then
``end-header``) followed by the parameters as little-endian float64 in
layout order. The header carries the MLP shape plus the model-kind
extras needed to rebuild the wrapper (schedule, conditional flag, k...).
"""

from __future__ import annotations

import os

import numpy as np

from .classifier import ClassifierNet
from .diffusion import DenoiserNet, NoiseSchedule
from .errors import DataError
from .flow import FlowNet
from .mlp import MlpSpec
from .params import ParamVector

MAGIC = "GUIDEFLOW-CKPT 1"


def _spec_fields(spec: MlpSpec) -> dict:
    return {
        "input_dim": spec.input_dim,
        "hidden_dims": ",".join(str(h) for h in spec.hidden_dims),
        "output_dim": spec.output_dim,
        "activation": spec.activation,
        "time_embed_dim": spec.time_embed_dim,
        "class_embed_dim": spec.class_embed_dim,
        "num_classes": spec.num_classes,
    }


def _spec_from_fields(fields: dict) -> MlpSpec:
    hidden = fields["hidden_dims"]
    return MlpSpec(
        input_dim=int(fields["input_dim"]),
        hidden_dims=tuple(int(h) for h in hidden.split(",")) if hidden else (),
        output_dim=int(fields["output_dim"]),
        activation=fields["activation"],
        time_embed_dim=int(fields["time_embed_dim"]),
        class_embed_dim=int(fields["class_embed_dim"]),
        num_classes=int(fields["num_classes"]),
    )


def write_checkpoint(path, kind: str, spec: MlpSpec, params: ParamVector, extra: dict) -> None:
    fields = {"kind": kind, **_spec_fields(spec), **extra}
    header = [MAGIC]
    for key, value in fields.items():
        header.append(f"{key}={value}")
    header.append("end-header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(params.values.astype("<f8").tobytes())


def read_checkpoint(path) -> tuple[str, MlpSpec, ParamVector, dict]:
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        first = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        if first != MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic {first!r})")
        fields: dict[str, str] = {}
        while True:
            line = fh.readline().decode("ascii", errors="replace").rstrip("\n")
            if line == "end-header":
                break
            if not line or "=" not in line:
                raise DataError(f"{path}: malformed checkpoint header line {line!r}")
            key, value = line.split("=", 1)
            fields[key] = value
        blob = fh.read()
    try:
        kind = fields.pop("kind")
        spec = _spec_from_fields(fields)
    except KeyError as exc:
        raise DataError(f"{path}: missing checkpoint field {exc}") from exc
    values = np.frombuffer(blob, dtype="<f8")
    try:
        params = ParamVector(spec.layout(), values)
    except Exception as exc:
        raise DataError(f"{path}: parameter blob does not match layout: {exc}") from exc
    return kind, spec, params, fields


def _schedule_extra(schedule: NoiseSchedule) -> dict:
    return {
        "schedule_T": schedule.T,
        "schedule_betas": ",".join(repr(float(b)) for b in schedule.beta),
    }


def _schedule_from_extra(fields: dict) -> NoiseSchedule:
    betas = np.array([float(b) for b in fields["schedule_betas"].split(",")])
    if betas.shape[0] != int(fields["schedule_T"]):
        raise DataError("schedule length mismatch in checkpoint")
    return NoiseSchedule.from_betas(betas)


def save_denoiser(path, net: DenoiserNet) -> None:
    write_checkpoint(
        path,
        "denoiser",
        net.spec,
        net.params,
        {
            "conditional": int(net.conditional),
            "dropout_prob": repr(net.dropout_prob),
            "time_scale": repr(net.time_scale),
            **_schedule_extra(net.schedule),
        },
    )


def save_classifier(path, net: ClassifierNet) -> None:
    write_checkpoint(
        path,
        "classifier",
        net.spec,
        net.params,
        {
            "classifier_kind": net.kind,
            "classifier_classes": net.num_classes,
            "time_scale": repr(net.time_scale),
            **_schedule_extra(net.schedule),
        },
    )


def save_flow(path, net: FlowNet) -> None:
    write_checkpoint(
        path,
        "flow",
        net.spec,
        net.params,
        {
            "conditional": int(net.conditional),
            "k": net.k,
            "time_scale": repr(net.time_scale),
        },
    )


def load_model(path):
    """Rebuild whichever model the checkpoint holds."""
    kind, spec, params, fields = read_checkpoint(path)
    try:
        if kind == "denoiser":
            return DenoiserNet(
                spec=spec,
                params=params,
                schedule=_schedule_from_extra(fields),
                conditional=bool(int(fields["conditional"])),
                dropout_prob=float(fields["dropout_prob"]),
                time_scale=float(fields["time_scale"]),
            )
        if kind == "classifier":
            return ClassifierNet(
                kind=fields["classifier_kind"],
                spec=spec,
                params=params,
                num_classes=int(fields["classifier_classes"]),
                schedule=_schedule_from_extra(fields),
                time_scale=float(fields["time_scale"]),
            )
        if kind == "flow":
            return FlowNet(
                spec=spec,
                params=params,
                conditional=bool(int(fields["conditional"])),
                k=int(fields["k"]),
                time_scale=float(fields["time_scale"]),
            )
    except KeyError as exc:
        raise DataError(f"{path}: missing checkpoint field {exc}") from exc
    raise DataError(f"{path}: unknown checkpoint kind {kind!r}")
