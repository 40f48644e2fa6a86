"""Bias-free fully-connected networks: evaluation, region codes, Jacobians, gradients."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels


class Activation(enum.Enum):
    RELU = "relu"
    RELU6 = "relu6"
    TANH = "tanh"
    HARD_TANH = "hard_tanh"
    HARD_SIGMOID = "hard_sigmoid"

    @classmethod
    def parse(cls, value) -> "Activation":
        if isinstance(value, Activation):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"hardtanh": "hard_tanh", "hardsigmoid": "hard_sigmoid"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown activation {value!r}") from None

    @property
    def boundaries(self) -> np.ndarray:
        return np.array(_BOUNDARIES[self], dtype=np.float64)

    @property
    def alphabet_size(self) -> int:
        return len(_BOUNDARIES[self]) + 1

    @property
    def piecewise_linear(self) -> bool:
        return self is not Activation.TANH

    @property
    def init_variance_scale(self) -> float:
        # numerator of the fan-in variance rule
        return 1.0 if self in (Activation.TANH, Activation.HARD_TANH) else 2.0

    def __call__(self, v):
        v = np.asarray(v)
        if self is Activation.RELU:
            return np.maximum(v, 0.0)
        if self is Activation.RELU6:
            return np.minimum(np.maximum(v, 0.0), 6.0)
        if self is Activation.TANH:
            return np.tanh(v)
        if self is Activation.HARD_TANH:
            return np.minimum(np.maximum(v, -1.0), 1.0)
        return np.minimum(np.maximum(v + 0.5, 0.0), 1.0)

    def derivative(self, v):
        """Elementwise derivative; at a kink the upper piece's slope is used."""
        v = np.asarray(v)
        if self is Activation.TANH:
            t = np.tanh(v)
            return 1.0 - t * t
        lo, *rest = _BOUNDARIES[self]
        hi = rest[0] if rest else np.inf
        return ((v >= lo) & (v < hi)).astype(v.dtype if v.dtype.kind == "f" else np.float64)


_BOUNDARIES = {
    Activation.RELU: (0.0,),
    Activation.RELU6: (0.0, 6.0),
    Activation.TANH: (0.0,),
    Activation.HARD_TANH: (-1.0, 1.0),
    Activation.HARD_SIGMOID: (-0.5, 0.5),
}


def activation_eval(a: Activation, v):
    return Activation.parse(a)(v)


@dataclass(frozen=True)
class Mlp:
    """Bias-free MLP. ``weights[l]`` has shape (widths[l+1], widths[l])."""

    widths: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    activation: Activation

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"invalid widths {widths}")
        if len(self.weights) != len(widths) - 1:
            raise ValueError(f"{len(self.weights)} weight matrices for widths {widths}")
        weights = []
        for i, w in enumerate(self.weights):
            w = np.asarray(w)
            if w.shape != (widths[i + 1], widths[i]):
                raise ValueError(
                    f"layer {i}: weight shape {w.shape}, expected {(widths[i + 1], widths[i])}"
                )
            if not np.all(np.isfinite(w)):
                raise ValueError(f"layer {i}: non-finite weights")
            w = w.copy()
            w.setflags(write=False)
            weights.append(w)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "activation", Activation.parse(self.activation))

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def n_classes(self) -> int:
        return self.widths[-1]

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return self.widths[1:-1]

    @property
    def depth(self) -> int:
        """Number of hidden layers."""
        return len(self.widths) - 2

    @property
    def n_hidden(self) -> int:
        return sum(self.hidden_widths)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype) -> "Mlp":
        return Mlp(self.widths, tuple(w.astype(dtype) for w in self.weights), self.activation)


def mlp_widths(input_dim: int, width: int, depth: int, n_classes: int) -> tuple[int, ...]:
    return (input_dim,) + (width,) * depth + (n_classes,)


def init_network(widths, activation, std_multiplier: float = 1.0, seed: int = 0, dtype=np.float64) -> Mlp:
    """Gaussian fan-in initialization (variance 2/fan_in, or 1/fan_in for tanh-like units)."""
    if std_multiplier <= 0:
        raise ValueError("std_multiplier must be positive")
    act = Activation.parse(activation)
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        std = std_multiplier * np.sqrt(act.init_variance_scale / fan_in)
        weights.append((rng.standard_normal((fan_out, fan_in)) * std).astype(dtype))
    return Mlp(tuple(widths), tuple(weights), act)


@dataclass(frozen=True)
class ForwardTrace:
    preactivations: list
    activations: list
    logits: np.ndarray


def _as_input(m: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=m.dtype)
    if x.shape[-1] != m.input_dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, network expects {m.input_dim}")
    return x


def forward(m: Mlp, x) -> ForwardTrace:
    """Evaluate the network on a d-vector or on the rows of an N x d matrix."""
    h = _as_input(m, x)
    pres, acts = [], []
    for w in m.weights[:-1]:
        z = h @ w.T
        h = m.activation(z)
        pres.append(z)
        acts.append(h)
    return ForwardTrace(pres, acts, h @ m.weights[-1].T)


def logits(m: Mlp, x) -> np.ndarray:
    return forward(m, x).logits


def hidden_preactivations(m: Mlp, x, layers=None) -> np.ndarray:
    """Hidden preactivations concatenated layer-major along the last axis."""
    pres = forward(m, x).preactivations
    if layers is not None:
        pres = [pres[i] for i in layers]
    if not pres:
        x = np.asarray(x)
        return np.zeros(x.shape[:-1] + (0,), dtype=np.float64)
    return np.concatenate(pres, axis=-1)


@dataclass(frozen=True)
class RegionCode:
    codes: np.ndarray

    def __eq__(self, other):
        return isinstance(other, RegionCode) and np.array_equal(self.codes, other.codes)

    def __hash__(self):
        return hash(self.codes.tobytes())

    def __len__(self):
        return len(self.codes)

    def distance(self, other: "RegionCode") -> int:
        return int(np.abs(self.codes.astype(np.int64) - other.codes.astype(np.int64)).sum())


def region_codes(m: Mlp, x, layers=None) -> np.ndarray:
    """int8 codes for a batch of points, shape (..., total hidden units)."""
    return kernels.region_codes(hidden_preactivations(m, x, layers), m.activation.boundaries)


def region_code(m: Mlp, x) -> RegionCode:
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError("region_code takes a single point; use region_codes for batches")
    return RegionCode(region_codes(m, x))


def logit_input_jacobian(m: Mlp, x) -> np.ndarray:
    """d(logits)/dx: (n, d) for a single point, (N, n, d) for a batch."""
    x = _as_input(m, x)
    trace = forward(m, x)
    jac = np.broadcast_to(m.weights[-1], x.shape[:-1] + m.weights[-1].shape)
    for w, z in zip(m.weights[-2::-1], trace.preactivations[::-1]):
        jac = (jac * m.activation.derivative(z)[..., None, :]) @ w
    return np.array(jac)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64) if np.asarray(z).dtype.kind != "f" else np.asarray(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_jacobian_from_logit_jacobian(probs, logit_jac) -> np.ndarray:
    """Apply the softmax derivative diag(s) - s s^T to a logit Jacobian."""
    probs = np.asarray(probs)
    ds = -probs[..., :, None] * probs[..., None, :]
    idx = np.arange(probs.shape[-1])
    ds[..., idx, idx] += probs
    return ds @ logit_jac


def softmax_input_jacobian(m: Mlp, x) -> np.ndarray:
    """d(softmax(logits))/dx: (n, d) for one point, (N, n, d) for a batch."""
    x = _as_input(m, x)
    probs = softmax(forward(m, x).logits)
    return softmax_jacobian_from_logit_jacobian(probs, logit_input_jacobian(m, x))


LOSS_KINDS = ("cross_entropy", "l2")


def loss_and_gradients(m: Mlp, inputs, labels, loss_kind: str = "cross_entropy", weights=None):
    """Mean loss over the batch and its gradient for every weight matrix.

    ``weights`` overrides the network's own matrices (used by training loops
    that keep mutable copies).
    """
    ws = m.weights if weights is None else weights
    x = np.atleast_2d(np.asarray(inputs, dtype=ws[0].dtype))
    y = np.atleast_1d(np.asarray(labels))
    n = m.n_classes
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape[0] != x.shape[0]:
        raise ValueError("inputs and labels disagree in length")
    if y.min() < 0 or y.max() >= n:
        raise ValueError(f"label out of range [0, {n})")
    act = m.activation
    hs, zs = [x], []
    h = x
    for w in ws[:-1]:
        z = h @ w.T
        h = act(z)
        zs.append(z)
        hs.append(h)
    out = h @ ws[-1].T
    b = x.shape[0]
    onehot = np.zeros_like(out)
    onehot[np.arange(b), y] = 1.0
    if loss_kind == "cross_entropy":
        shifted = out - out.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(lse - shifted[np.arange(b), y]))
        delta = softmax(out) - onehot
    elif loss_kind == "l2":
        resid = out - onehot
        loss = float(np.mean(np.sum(resid**2, axis=1)))
        delta = 2.0 * resid
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    delta = delta / b
    grads = [None] * len(ws)
    grads[-1] = delta.T @ hs[-1]
    for layer in range(len(ws) - 2, -1, -1):
        delta = (delta @ ws[layer + 1]) * act.derivative(zs[layer])
        grads[layer] = delta.T @ hs[layer]
    return loss, grads


def param_gradients(m: Mlp, inputs, labels, loss_kind: str = "cross_entropy"):
    return loss_and_gradients(m, inputs, labels, loss_kind)[1]


# Checkpoint layout (all integers little-endian):
#   magic   8 bytes  b"NSMLP\x00\x01\x00"  (last two bytes: format version 1)
#   act     u8       index into CHECKPOINT_ACTIVATIONS
#   dtype   u8       4 = float32, 8 = float64
#   nlayers u16      number of entries in widths
#   widths  nlayers x u32
#   then, per layer, widths[l+1] * widths[l] IEEE floats, row-major, little-endian
CHECKPOINT_MAGIC = b"NSMLP\x00\x01\x00"
CHECKPOINT_ACTIVATIONS = (
    Activation.RELU,
    Activation.RELU6,
    Activation.TANH,
    Activation.HARD_TANH,
    Activation.HARD_SIGMOID,
)


class CheckpointError(ValueError):
    pass


def save_network(m: Mlp, path) -> None:
    itemsize = m.dtype.itemsize
    if itemsize not in (4, 8):
        raise CheckpointError(f"unsupported dtype {m.dtype}")
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<BBH", CHECKPOINT_ACTIVATIONS.index(m.activation), itemsize, len(m.widths)),
        struct.pack(f"<{len(m.widths)}I", *m.widths),
    ]
    dt = np.dtype(f"<f{itemsize}")
    parts.extend(np.ascontiguousarray(w, dtype=dt).tobytes() for w in m.weights)
    Path(path).write_bytes(b"".join(parts))


def load_network(path) -> Mlp:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a version-1 network checkpoint")
    act_idx, itemsize, nlayers = struct.unpack("<BBH", raw[8:12])
    if itemsize not in (4, 8) or act_idx >= len(CHECKPOINT_ACTIVATIONS):
        raise CheckpointError(f"{path}: corrupt header")
    off = 12 + 4 * nlayers
    widths = struct.unpack(f"<{nlayers}I", raw[12:off])
    dt = np.dtype(f"<f{itemsize}")
    weights = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        count = fan_in * fan_out
        w = np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(fan_out, fan_in)
        weights.append(w.astype(dt.newbyteorder("=")))
        off += count * itemsize
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return Mlp(widths, tuple(weights), CHECKPOINT_ACTIVATIONS[act_idx])
