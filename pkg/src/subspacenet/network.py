"""Residual MLP embedding network with hand-written backpropagation.

Layout (points are columns, every layer acts on one instance at a time)::

    X -> zscore -> W_in . + b_in                      = h_0
    h_{k+1} = h_k + relu(W2 zscore(relu(W1 zscore(h_k) + b1)) + b2)
    Z = l2normalize(W_out zscore(h_L) + b_out)

Normalization statistics are always those of the current instance, during
training and at inference. All parameters live in one flat float64 vector;
the per-layer matrices are views into it, which keeps the optimizer and the
checkpoint format trivial.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .dataio import ValidationError

STD_FLOOR = 1e-4  # sqrt(1e-8)
CHECKPOINT_FORMAT = "subspacenet-checkpoint/1"


@dataclass
class NetworkConfig:
    input_dim: int = 2
    hidden_width: int = 128
    num_blocks: int = 50
    output_dim: int = 5
    use_l2norm_output: bool = True
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValidationError("num_blocks must be >= 1")
        if self.input_dim < 1:
            raise ValidationError("input_dim must be >= 1")
        if self.output_dim < 2 or self.hidden_width < self.output_dim:
            raise ValidationError("need hidden_width >= output_dim >= 2")
        if self.activation != "relu":
            raise ValidationError(f"unsupported activation {self.activation!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown network keys: {sorted(unknown)}")
        return cls(**obj)


def param_shapes(config):
    """Parameter shapes in checkpoint order."""
    d, h, k = config.input_dim, config.hidden_width, config.output_dim
    shapes = [(h, d), (h,)]
    for _ in range(config.num_blocks):
        shapes += [(h, h), (h,), (h, h), (h,)]
    shapes += [(k, h), (k,)]
    return shapes


def count_params(config):
    return sum(int(np.prod(s)) for s in param_shapes(config))


class NetworkParams:
    """Flat parameter vector plus named per-layer views.

    ``w_in, b_in``, ``blocks[k] = (w1, b1, w2, b2)`` and ``w_out, b_out`` all
    alias :attr:`flat`; writing through a view updates the vector.
    """

    def __init__(self, config, flat=None):
        self.config = config
        n = count_params(config)
        if flat is None:
            flat = np.zeros(n)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise ValidationError(f"expected {n} parameters, got {flat.shape}")
        self.flat = flat
        views, offset = [], 0
        for shape in param_shapes(config):
            size = int(np.prod(shape))
            views.append(flat[offset:offset + size].reshape(shape))
            offset += size
        self.arrays = views
        self.w_in, self.b_in = views[0], views[1]
        self.blocks = [tuple(views[2 + 4 * i: 6 + 4 * i]) for i in range(config.num_blocks)]
        self.w_out, self.b_out = views[-2], views[-1]

    def copy(self):
        return NetworkParams(self.config, self.flat.copy())

    def zeros_like(self):
        return NetworkParams(self.config)

    def names(self):
        out = ["input.weight", "input.bias"]
        for i in range(self.config.num_blocks):
            out += [f"block{i}.mlp1.weight", f"block{i}.mlp1.bias",
                    f"block{i}.mlp2.weight", f"block{i}.mlp2.bias"]
        return out + ["output.weight", "output.bias"]

    def __len__(self):
        return self.flat.size


def init_params(config):
    """Glorot-uniform weights, zero biases, seeded by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    params = NetworkParams(config)
    for arr in params.arrays:
        if arr.ndim == 2:
            fan_out, fan_in = arr.shape
            a = np.sqrt(6.0 / (fan_in + fan_out))
            arr[...] = rng.uniform(-a, a, size=arr.shape)
    return params


def zscore_norm(x):
    """Standardize each row over the columns.

    Returns ``(y, std)`` where ``std`` is the floored population standard
    deviation used as divisor. Rows whose standard deviation is below
    ``STD_FLOOR`` are divided by the floor, so a constant row maps to zeros.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValidationError("zscore_norm needs a d x N matrix with N >= 2")
    return _kernels.zscore_fwd(x, STD_FLOOR)


def zscore_backward(grad, y, std, out=None):
    """Gradient w.r.t. the input of :func:`zscore_norm`; adds into ``out`` if given."""
    grad = np.ascontiguousarray(grad)
    if out is None:
        return _kernels.zscore_bwd(grad, y, std, STD_FLOOR, np.empty_like(grad), False)
    return _kernels.zscore_bwd(grad, y, std, STD_FLOOR, out, True)


@dataclass
class ForwardTape:
    """Everything :func:`backward` needs from a forward pass."""

    x: np.ndarray
    in_norm: tuple
    blocks: list
    out_norm: tuple
    raw_output: np.ndarray
    output_norms: np.ndarray
    z: np.ndarray

    @property
    def n_points(self):
        return self.x.shape[1]


def forward(x, params, config=None, keep_tape=True):
    """Embed the columns of ``x``; returns ``(Z, tape)`` (tape is None if not kept)."""
    config = config or params.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != config.input_dim:
        raise ValidationError(
            f"expected input of shape ({config.input_dim}, N), got {x.shape}")
    if x.shape[1] < 2:
        raise ValidationError("need at least two points")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    a0, s0 = zscore_norm(x)
    h = params.w_in @ a0 + params.b_in[:, None]
    saved = []
    for w1, b1, w2, b2 in params.blocks:
        a1, s1 = _kernels.zscore_fwd(h, STD_FLOOR)
        r1 = _kernels.bias_relu(w1 @ a1, b1)
        a2, s2 = _kernels.zscore_fwd(r1, STD_FLOOR)
        h, r2 = _kernels.residual_bias_relu(h, w2 @ a2, b2)
        if keep_tape:
            # r > 0 doubles as the ReLU mask
            saved.append((a1, s1, r1, a2, s2, r2))
    a_out, s_out = zscore_norm(h)
    o = params.w_out @ a_out + params.b_out[:, None]
    if config.use_l2norm_output:
        norms = np.sqrt(np.einsum("ij,ij->j", o, o))
        z = o / norms
    else:
        norms = np.ones(o.shape[1])
        z = o
    if not keep_tape:
        return z, None
    return z, ForwardTape(x, (a0, s0), saved, (a_out, s_out), o, norms, z)


def l2norm_backward(grad, z, norms):
    """Vector-Jacobian product of column normalization: (I - z z^T) g / |o|."""
    radial = np.einsum("ij,ij->j", z, grad)
    return (grad - z * radial) / norms


def backward(tape, params, grad_z, config=None):
    """Reverse-mode pass; returns ``(param_grads, grad_x)``.

    ``param_grads`` is a :class:`NetworkParams` whose flat vector holds the
    gradient of every parameter in checkpoint order.
    """
    config = config or params.config
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if grad_z.shape != tape.z.shape or len(tape.blocks) != config.num_blocks:
        raise ValidationError("stale tape: shapes do not match this network")
    grads = params.zeros_like()
    if config.use_l2norm_output:
        g = l2norm_backward(grad_z, tape.z, tape.output_norms)
    else:
        g = grad_z
    a_out, s_out = tape.out_norm
    grads.w_out[...] = g @ a_out.T
    grads.b_out[...] = g.sum(axis=1)
    gh = zscore_backward(params.w_out.T @ g, a_out, s_out)
    for (w1, _, w2, _), (gw1, gb1, gw2, gb2), (a1, s1, r1, a2, s2, r2) in zip(
            reversed(params.blocks), reversed(grads.blocks), reversed(tape.blocks)):
        gu2 = _kernels.relu_grad(gh, r2, gb2)
        np.matmul(gu2, a2.T, out=gw2)
        gu1 = _kernels.relu_grad(zscore_backward(w2.T @ gu2, a2, s2), r1, gb1)
        np.matmul(gu1, a1.T, out=gw1)
        zscore_backward(w1.T @ gu1, a1, s1, out=gh)
    a0, s0 = tape.in_norm
    grads.w_in[...] = gh @ a0.T
    grads.b_in[...] = gh.sum(axis=1)
    grad_x = zscore_backward(params.w_in.T @ gh, a0, s0)
    return grads, grad_x


def embed(x, params):
    """Inference-only forward pass (no tape)."""
    return forward(x, params, keep_tape=False)[0]


# --- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, params, epoch=0, seed=0, extra=None, adam_state=None):
    """Write a JSON header line followed by little-endian float64 blobs.

    Blob order is the parameter vector, then (when an optimizer state is
    given) the first- and second-moment vectors.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": params.config.to_dict(),
        "epoch": int(epoch),
        "seed": int(seed),
        "n_params": int(params.flat.size),
        "blobs": ["params"],
        "param_order": params.names(),
    }
    blobs = [params.flat]
    if adam_state is not None:
        header["blobs"] += ["adam_m", "adam_v"]
        header["adam_t"] = int(adam_state.t)
        blobs += [adam_state.m, adam_state.v]
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for blob in blobs:
            fh.write(np.ascontiguousarray(blob, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(params, header, blobs)`` where blobs maps names to arrays."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    nl = data.index(b"\n")
    header = json.loads(data[:nl])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"not a checkpoint: {path}")
    config = NetworkConfig.from_dict(header["config"])
    n = header["n_params"]
    body = np.frombuffer(data[nl + 1:], dtype="<f8")
    if body.size != n * len(header["blobs"]):
        raise ValidationError("checkpoint blob size does not match header")
    blobs = {name: body[i * n:(i + 1) * n].astype(np.float64)
             for i, name in enumerate(header["blobs"])}
    return NetworkParams(config, blobs["params"]), header, blobs
