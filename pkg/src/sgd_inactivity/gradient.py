"""Empirical squared-error risk of the read-out network and its gradient.

At non-differentiable points the gradient follows the usual backprop
convention: ReLU'(0) = 0 and the clip derivative is 0 at both endpoints.
``GradReport.kink_flags`` marks coordinates whose derivative touched such a
point, so callers can tell a true partial derivative from a convention value.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .network import ReadOut, as_arch, check_theta, forward_trace, layer_offsets, unpack_layer


@dataclass
class Batch:
    """Training or validation sample: ``inputs`` is ``(m, d)``, ``labels`` is ``(m,)``."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.labels.shape[0] == 0:
            raise ValueError("batch must be nonempty")

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    def check_bounds(self, u: float, v: float, label_lo: float, label_hi: float) -> None:
        if self.inputs.min() < u or self.inputs.max() > v:
            raise ValueError(f"inputs leave [{u}, {v}]")
        if self.labels.min() < label_lo or self.labels.max() > label_hi:
            raise ValueError(f"labels leave [{label_lo}, {label_hi}]")


@dataclass
class GradReport:
    gradient: np.ndarray
    loss: float
    kink_flags: np.ndarray

    @property
    def any_kink(self) -> bool:
        return bool(self.kink_flags.any())

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "gradient": [float(g) for g in self.gradient],
            "kink_flags": [bool(k) for k in self.kink_flags],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _prepare(arch, theta, batch: Batch):
    arch = as_arch(arch)
    arch.require_scalar_output()
    theta = check_theta(arch, theta)
    if batch.inputs.shape[1] != arch.input_dim:
        raise ValueError(
            f"batch inputs have dimension {batch.inputs.shape[1]}, network expects {arch.input_dim}"
        )
    return arch, theta


def _mean_fixed_order(values: np.ndarray) -> float:
    # Sequential left-to-right sum so the result never depends on the reduction strategy.
    total = 0.0
    for v in values.tolist():
        total += v
    return total / len(values)


def empirical_risk(arch, theta, batch: Batch, readout: ReadOut) -> float:
    """``(1/m) sum_j |c(N(x_j)) - y_j|^2``."""
    arch, theta = _prepare(arch, theta, batch)
    out = forward_trace(arch, theta, batch.inputs).output[:, 0]
    resid = readout(out) - batch.labels
    return _mean_fixed_order(resid * resid)


def risk_gradient(arch, theta, batch: Batch, readout: ReadOut, kink_tol: float = 0.0) -> GradReport:
    """Backpropagated gradient of :func:`empirical_risk`.

    ``kink_tol`` widens the kink test to ``|z| <= kink_tol`` (ReLU) and
    ``|y - endpoint| <= kink_tol`` (clip); the default 0 flags exact kinks only.
    """
    arch, theta = _prepare(arch, theta, batch)
    dims = arch.dims
    depth = arch.depth
    offsets = layer_offsets(arch)
    m = batch.size

    trace = forward_trace(arch, theta, batch.inputs)
    out = trace.output[:, 0]
    resid = readout(out) - batch.labels
    loss = _mean_fixed_order(resid * resid)

    if readout.kind == "clip":
        clip_kink = (np.abs(out - readout.lo) <= kink_tol) | (np.abs(out - readout.hi) <= kink_tol)
    else:
        clip_kink = np.zeros(m, dtype=bool)

    grad = np.zeros_like(theta)
    flags = np.zeros(theta.shape[0], dtype=bool)

    # delta: d loss / d pre-activation of the current layer, shape (m, a_j)
    delta = ((2.0 / m) * resid * readout.derivative(out))[:, None]
    # downstream_kink[s]: sample s met a kink strictly after the current layer's pre-activation
    downstream_kink = clip_kink.copy()
    for j in range(depth, 0, -1):
        prev = trace.inputs if j == 1 else trace.post[j - 2]
        w, _ = unpack_layer(theta, offsets[j - 1], dims[j], dims[j - 1])
        # axis-0 reductions add the per-sample terms in ascending sample order
        gw = (delta[:, :, None] * prev[:, None, :]).sum(axis=0)
        gb = delta.sum(axis=0)
        start = offsets[j - 1]
        split = start + dims[j] * dims[j - 1]
        grad[start:split] = gw.reshape(-1)
        grad[split:offsets[j]] = gb

        # A unit's parameters are flagged when a sample hits a kink at that unit
        # or anywhere downstream of it.
        if j < depth:
            own_kink = np.abs(trace.pre[j - 1]) <= kink_tol
        else:
            own_kink = np.zeros((m, dims[j]), dtype=bool)
        unit_kink = own_kink | downstream_kink[:, None]
        unit_flag = unit_kink.any(axis=0)
        flags[start:split] = np.repeat(unit_flag, dims[j - 1])
        flags[split:offsets[j]] = unit_flag

        if j > 1:
            z_prev = trace.pre[j - 2]
            delta = np.where(z_prev > 0.0, (delta[:, :, None] * w).sum(axis=1), 0.0)
            downstream_kink = unit_kink.any(axis=1)

    return GradReport(gradient=grad, loss=loss, kink_flags=flags)


def finite_diff_gradient(arch, theta, batch: Batch, readout: ReadOut, h: float = 1e-5) -> np.ndarray:
    """Central differences of :func:`empirical_risk`, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step h must be positive")
    arch, theta = _prepare(arch, theta, batch)
    grad = np.empty_like(theta)
    probe = theta.copy()
    for i in range(theta.shape[0]):
        probe[i] = theta[i] + h
        up = empirical_risk(arch, probe, batch, readout)
        probe[i] = theta[i] - h
        down = empirical_risk(arch, probe, batch, readout)
        probe[i] = theta[i]
        grad[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - b||_inf / max(||a||_inf, ||b||_inf)``; 0 when both are below ``floor``."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
    if scale < floor:
        return 0.0
    return float(np.max(np.abs(a - b)) / scale)
