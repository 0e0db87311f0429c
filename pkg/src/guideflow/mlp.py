"""Dense MLP with hand-written reverse-mode gradients.

One fixed topology covers every model in the package: a linear input
layer, optional additive time/class conditioning injected into the first
hidden pre-activation, a stack of hidden layers sharing one activation,
and a linear readout. Gradients are exact reverse-mode derivatives of
<cotangent, output> with respect to the parameters and to every input
vector. With no hidden layers the network degenerates to a single linear
map (used by the linear classifier).

All arithmetic is float64. Functions accept a single vector ``(d,)`` or a
batch ``(n, d)``; batched parameter gradients are summed over rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .params import ParamVector
from .rng import standard_normal

ACTIVATIONS = ("silu", "relu")


@dataclass(frozen=True)
class MlpSpec:
    """Shape of one MLP, including its conditioning paths.

    ``class_embed_dim > 0`` allocates an embedding table with
    ``num_classes + 1`` rows; the extra row is the null class used when
    conditioning is dropped.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "silu"
    time_embed_dim: int = 0
    class_embed_dim: int = 0
    num_classes: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ConfigError("input_dim and output_dim must be positive")
        if any(h <= 0 for h in self.hidden_dims):
            raise ConfigError("hidden dims must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.time_embed_dim < 0 or self.class_embed_dim < 0:
            raise ConfigError("embedding dims must be non-negative")
        if self.class_embed_dim > 0 and self.num_classes <= 0:
            raise ConfigError("class_embed_dim > 0 requires num_classes > 0")
        if (self.time_embed_dim > 0 or self.class_embed_dim > 0) and not self.hidden_dims:
            raise ConfigError("embeddings need at least one hidden layer to attach to")

    @property
    def null_class(self) -> int:
        return self.num_classes

    def layout(self):
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        entries = []
        for i in range(len(dims) - 1):
            entries.append((f"w{i}", (dims[i], dims[i + 1])))
            entries.append((f"b{i}", (dims[i + 1],)))
        if self.time_embed_dim > 0:
            entries.append(("time_w", (self.time_embed_dim, self.hidden_dims[0])))
        if self.class_embed_dim > 0:
            entries.append(("class_embed", (self.num_classes + 1, self.class_embed_dim)))
            entries.append(("class_w", (self.class_embed_dim, self.hidden_dims[0])))
        return tuple(entries)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_dims) + 1


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamVector:
    """Fan-in scaled uniform weights, zero biases, unit normal embeddings."""
    params = ParamVector(spec.layout())
    for name, shape in spec.layout():
        if name == "class_embed":
            params[name][...] = standard_normal(rng, shape)
        elif name.startswith(("w", "time_w", "class_w")) and len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            params[name][...] = rng.uniform(-bound, bound, shape)
        # biases stay zero
    return params


def time_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding of a scalar step or an array of steps.

    Layout is [sin block, cos block] over frequencies
    ``max_period ** (-i / (dim / 2))`` for i = 0 .. dim/2 - 1, so every
    component lies in [-1, 1] and t = 0 maps to (0, ..., 0, 1, ..., 1).
    """
    if dim <= 0 or dim % 2 != 0:
        raise ConfigError(f"time embedding dim must be positive and even, got {dim}")
    half = dim // 2
    freqs = float(max_period) ** (-np.arange(half, dtype=np.float64) / half)
    angles = np.multiply.outer(np.asarray(t, dtype=np.float64), freqs)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # sigmoid(z) = (tanh(z/2) + 1) / 2: branch-free, saturates instead of
    # overflowing, and runs in-place (large temporaries are the hot cost here)
    s = np.multiply(z, 0.5)
    np.tanh(s, out=s)
    np.add(s, 1.0, out=s)
    np.multiply(s, 0.5, out=s)
    return s


def _act(spec: MlpSpec, z: np.ndarray):
    """Activation value plus the state its derivative reuses."""
    if spec.activation == "silu":
        s = _sigmoid(z)
        return z * s, s
    return np.maximum(z, 0.0), None


def _act_grad(spec: MlpSpec, z: np.ndarray, gate) -> np.ndarray:
    if spec.activation == "silu":
        out = np.subtract(1.0, gate)
        np.multiply(out, z, out=out)
        np.add(out, 1.0, out=out)
        np.multiply(out, gate, out=out)
        return out
    return (z > 0.0).astype(np.float64)


class _Cache(NamedTuple):
    x: np.ndarray
    t_embed: np.ndarray | None
    c_embed: np.ndarray | None
    pre: list[np.ndarray]  # hidden pre-activations
    gates: list  # sigmoid values (silu) reused by the backward pass
    acts: list[np.ndarray]  # hidden activations
    y: np.ndarray


def _as_batch(name: str, v, dim: int, n_rows: int | None) -> tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=np.float64)
    was_vector = v.ndim == 1
    if was_vector:
        v = v[None, :]
    if v.ndim != 2 or v.shape[1] != dim:
        raise ConfigError(f"{name} must have {dim} columns, got shape {v.shape}")
    if n_rows is not None and v.shape[0] != n_rows:
        raise ConfigError(f"{name} rows {v.shape[0]} incompatible with batch {n_rows}")
    return v, was_vector


def _forward_cached(spec, params, x, t_embed, c_embed) -> tuple[_Cache, bool]:
    x2d, was_vector = _as_batch("x", x, spec.input_dim, None)
    n = x2d.shape[0]
    te = ce = None
    if spec.time_embed_dim > 0:
        if t_embed is None:
            raise ConfigError("spec has a time path but t_embed is missing")
        te, _ = _as_batch("t_embed", t_embed, spec.time_embed_dim, n)
    elif t_embed is not None:
        raise ConfigError("t_embed given but spec.time_embed_dim == 0")
    if spec.class_embed_dim > 0:
        if c_embed is None:
            raise ConfigError("spec has a class path but c_embed is missing")
        ce, _ = _as_batch("c_embed", c_embed, spec.class_embed_dim, n)
    elif c_embed is not None:
        raise ConfigError("c_embed given but spec.class_embed_dim == 0")

    pre: list[np.ndarray] = []
    gates: list = []
    acts: list[np.ndarray] = []
    h = x2d
    for i in range(len(spec.hidden_dims)):
        z = h @ params[f"w{i}"] + params[f"b{i}"]
        if i == 0:
            if te is not None:
                z = z + te @ params["time_w"]
            if ce is not None:
                z = z + ce @ params["class_w"]
        pre.append(z)
        h, gate = _act(spec, z)
        gates.append(gate)
        acts.append(h)
    out_idx = len(spec.hidden_dims)
    y = h @ params[f"w{out_idx}"] + params[f"b{out_idx}"]
    return _Cache(x2d, te, ce, pre, gates, acts, y), was_vector


def mlp_forward(spec: MlpSpec, params: ParamVector, x, t_embed=None, c_embed=None) -> np.ndarray:
    """Evaluate the network; pure function of (params, inputs)."""
    cache, was_vector = _forward_cached(spec, params, x, t_embed, c_embed)
    return cache.y[0] if was_vector else cache.y


class MlpGrads(NamedTuple):
    params: ParamVector
    x: np.ndarray
    t_embed: np.ndarray | None
    c_embed: np.ndarray | None


def _backward_from_cache(spec, params, cache: _Cache, cotangent: np.ndarray) -> MlpGrads:
    grads = ParamVector(spec.layout())
    out_idx = len(spec.hidden_dims)
    g = cotangent
    last_act = cache.acts[-1] if spec.hidden_dims else cache.x
    grads[f"w{out_idx}"][...] = last_act.T @ g
    grads[f"b{out_idx}"][...] = g.sum(axis=0)
    g = g @ params[f"w{out_idx}"].T
    g_te = g_ce = None
    for i in range(len(spec.hidden_dims) - 1, -1, -1):
        g = g * _act_grad(spec, cache.pre[i], cache.gates[i])
        if i == 0:
            if cache.t_embed is not None:
                grads["time_w"][...] = cache.t_embed.T @ g
                g_te = g @ params["time_w"].T
            if cache.c_embed is not None:
                grads["class_w"][...] = cache.c_embed.T @ g
                g_ce = g @ params["class_w"].T
        prev = cache.acts[i - 1] if i > 0 else cache.x
        grads[f"w{i}"][...] = prev.T @ g
        grads[f"b{i}"][...] = g.sum(axis=0)
        g = g @ params[f"w{i}"].T
    return MlpGrads(grads, g, g_te, g_ce)


def mlp_backward(
    spec: MlpSpec, params: ParamVector, x, t_embed=None, c_embed=None, cotangent=None
) -> MlpGrads:
    """Exact gradients of <cotangent, output> w.r.t. params and inputs.

    For a batch, parameter gradients are summed over rows while input
    gradients stay per-row. The ``class_embed`` table entry of the
    returned ParamVector is zero here; scattering the ``c_embed`` input
    gradient into table rows is the caller's job (it knows the ids).
    """
    cache, was_vector = _forward_cached(spec, params, x, t_embed, c_embed)
    if cotangent is None:
        raise ConfigError("cotangent vector is required")
    cot, _ = _as_batch("cotangent", cotangent, spec.output_dim, cache.y.shape[0])
    out = _backward_from_cache(spec, params, cache, cot)
    if was_vector:
        out = MlpGrads(
            out.params,
            out.x[0],
            None if out.t_embed is None else out.t_embed[0],
            None if out.c_embed is None else out.c_embed[0],
        )
    return out
