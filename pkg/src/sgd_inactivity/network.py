"""Fully connected ReLU networks stored as one flat parameter vector.

Layer ``j`` (1-based) occupies the half-open index block ``[k_{j-1}, k_j)`` of
the flat vector (0-based), laid out as the ``a_j x a_{j-1}`` weight matrix in
row-major order followed by the ``a_j`` biases.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``(a_0, ..., a_D)``; ``a_0`` is the input dimension."""

    dims: tuple[int, ...]

    def __init__(self, dims: Sequence[int]):
        dims = tuple(int(a) for a in dims)
        if len(dims) < 2:
            raise ValueError(f"architecture needs at least two widths, got {dims}")
        if any(a < 1 for a in dims):
            raise ValueError(f"all widths must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    @property
    def max_hidden_width(self) -> int:
        hidden = self.dims[1:-1]
        return max(hidden) if hidden else 0

    def require_scalar_output(self) -> None:
        if self.output_dim != 1:
            raise ValueError(f"risk and training need output width 1, got {self.dims}")

    def to_json(self) -> str:
        return json.dumps(list(self.dims))

    @classmethod
    def from_json(cls, text: str) -> "Architecture":
        return cls(json.loads(text))

    def __iter__(self):
        return iter(self.dims)

    def __len__(self):
        return len(self.dims)


def as_arch(arch) -> Architecture:
    return arch if isinstance(arch, Architecture) else Architecture(arch)


def param_count(arch) -> int:
    dims = as_arch(arch).dims
    return sum(dims[j] * (dims[j - 1] + 1) for j in range(1, len(dims)))


def layer_offsets(arch) -> list[int]:
    """Cumulative block boundaries ``[k_0 = 0, k_1, ..., k_D = P(a)]``."""
    dims = as_arch(arch).dims
    offsets = [0]
    for j in range(1, len(dims)):
        offsets.append(offsets[-1] + dims[j] * (dims[j - 1] + 1))
    return offsets


def layer_slice(arch, j: int) -> slice:
    """0-based slice of layer ``j`` (1-based) in the flat vector."""
    offsets = layer_offsets(arch)
    if not 1 <= j < len(offsets):
        raise IndexError(f"layer {j} out of range 1..{len(offsets) - 1}")
    return slice(offsets[j - 1], offsets[j])


def check_theta(arch, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    expected = param_count(arch)
    if theta.ndim != 1 or theta.shape[0] != expected:
        raise ValueError(f"parameter vector must have shape ({expected},), got {theta.shape}")
    return theta


def unpack_layer(theta: np.ndarray, offset: int, out_dim: int, in_dim: int):
    """Return views ``(W, b)`` of the affine block starting at ``offset``."""
    end = offset + out_dim * in_dim + out_dim
    if offset < 0 or end > theta.shape[0]:
        raise IndexError(
            f"affine block [{offset}, {end}) exceeds parameter vector of length {theta.shape[0]}"
        )
    w = theta[offset:offset + out_dim * in_dim].reshape(out_dim, in_dim)
    b = theta[offset + out_dim * in_dim:end]
    return w, b


def affine_apply(theta, offset: int, out_dim: int, in_dim: int, x) -> np.ndarray:
    """``W x + b`` for the block at ``offset``; ``x`` may be one vector or a batch of rows."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != in_dim:
        raise ValueError(f"input has trailing dimension {x.shape[-1]}, expected {in_dim}")
    w, b = unpack_layer(theta, offset, out_dim, in_dim)
    return matvec(w, x) + b


def matvec(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise ``w @ x`` summed in a fixed order, so a row never depends on the rest of its batch."""
    return (x[..., None, :] * w).sum(axis=-1)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _as_batch(arch: Architecture, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ValueError(f"input must have trailing dimension {arch.input_dim}, got shape {x.shape}")
    return x, single


def realize(arch, theta, x) -> np.ndarray:
    """Evaluate the network. ``x`` has shape ``(a_0,)`` or ``(m, a_0)``.

    ReLU is applied after every affine map except the last one.
    """
    arch = as_arch(arch)
    theta = check_theta(arch, theta)
    h, single = _as_batch(arch, x)
    dims = arch.dims
    offsets = layer_offsets(arch)
    for j in range(1, len(dims)):
        h = affine_apply(theta, offsets[j - 1], dims[j], dims[j - 1], h)
        if j < len(dims) - 1:
            h = relu(h)
    return h[0] if single else h


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass.

    ``pre[j-1]`` is the affine output of layer ``j``; ``post[j-1]`` is its
    activation (identical to ``pre`` for the last layer). ``inputs`` is the
    network input.
    """

    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def forward_trace(arch, theta, x) -> ForwardTrace:
    arch = as_arch(arch)
    theta = check_theta(arch, theta)
    h, single = _as_batch(arch, x)
    dims = arch.dims
    offsets = layer_offsets(arch)
    inputs = h
    pre, post = [], []
    for j in range(1, len(dims)):
        z = affine_apply(theta, offsets[j - 1], dims[j], dims[j - 1], h)
        h = relu(z) if j < len(dims) - 1 else z
        pre.append(z)
        post.append(h)
    if single:
        return ForwardTrace(inputs[0], [z[0] for z in pre], [a[0] for a in post])
    return ForwardTrace(inputs, pre, post)


@dataclass(frozen=True)
class ReadOut:
    """Scalar map applied to the network output: ``clip`` to ``[lo, hi]`` or ``identity``."""

    kind: str = "clip"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("clip", "identity"):
            raise ValueError(f"unsupported read-out {self.kind!r}; use 'clip' or 'identity'")
        if self.kind == "clip" and not self.lo < self.hi:
            raise ValueError(f"clip read-out needs lo < hi, got [{self.lo}, {self.hi}]")

    def __call__(self, y):
        return read_out(self, y)

    def derivative(self, y) -> np.ndarray:
        """1 on the open interval ``(lo, hi)``, 0 elsewhere (endpoints included)."""
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "identity":
            return np.ones_like(y)
        return ((y > self.lo) & (y < self.hi)).astype(np.float64)

    def at_kink(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "identity":
            return np.zeros(y.shape, dtype=bool)
        return (y == self.lo) | (y == self.hi)

    def to_dict(self) -> dict:
        if self.kind == "identity":
            return {"kind": "identity"}
        return {"kind": "clip", "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_config(cls, spec) -> "ReadOut":
        if isinstance(spec, ReadOut):
            return spec
        if isinstance(spec, str):
            return cls(spec)
        return cls(**spec)


CLIP = ReadOut("clip", 0.0, 1.0)
IDENTITY = ReadOut("identity")


def read_out(r: ReadOut, y):
    if r.kind == "identity":
        return y
    if np.ndim(y) == 0:
        return max(r.lo, min(float(y), r.hi))
    return np.clip(y, r.lo, r.hi)


# ParamVector serialization: JSON list of numbers, or a binary blob made of a
# little-endian uint64 length followed by that many little-endian float64.

def params_to_json(theta) -> str:
    return json.dumps([float(v) for v in np.asarray(theta, dtype=np.float64)])


def params_from_json(text: str) -> np.ndarray:
    return np.asarray(json.loads(text), dtype=np.float64)


def params_to_bytes(theta) -> bytes:
    theta = np.ascontiguousarray(theta, dtype="<f8")
    return struct.pack("<Q", theta.shape[0]) + theta.tobytes()


def params_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 8:
        raise ValueError("blob too short for length header")
    (n,) = struct.unpack_from("<Q", blob, 0)
    if len(blob) != 8 + 8 * n:
        raise ValueError(f"blob declares {n} values but holds {(len(blob) - 8) / 8}")
    return np.frombuffer(blob, dtype="<f8", offset=8, count=n).astype(np.float64)
