"""Inactive parameter regions: a hidden layer whose every weight and bias is negative.

Such a layer maps the nonnegative output of the previous ReLU to a strictly
negative vector, so its own ReLU output is exactly zero for every input. The
network realization is then constant, its gradient vanishes on that layer's
block, and SGD never leaves the region.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import DataModel
from .network import as_arch, check_theta, layer_offsets, realize


def _check_layer_index(depth: int, j: int, include_first: bool) -> None:
    lo = 1 if include_first else 2
    if not lo <= j <= depth - 1:
        raise IndexError(f"layer {j} outside admissible range {lo}..{depth - 1}")


def is_layer_inactive(arch, theta, j: int, include_first: bool = False) -> bool:
    """All coordinates of layer ``j``'s block are strictly negative.

    ``j`` ranges over ``2..D-1``; ``include_first=True`` also admits ``j = 1``,
    which defines a valid set but never contributes to the inactive union.
    ``-0.0`` is not negative.
    """
    arch = as_arch(arch)
    theta = check_theta(arch, theta)
    _check_layer_index(arch.depth, j, include_first)
    offsets = layer_offsets(arch)
    return bool(np.all(theta[offsets[j - 1]:offsets[j]] < 0.0))


@dataclass
class InactivityReport:
    layers: dict[int, bool] = field(default_factory=dict)

    @property
    def inactive(self) -> bool:
        return any(self.layers.values())

    @property
    def witness(self) -> Optional[int]:
        hits = [j for j, flag in sorted(self.layers.items()) if flag]
        return hits[0] if hits else None

    def to_dict(self) -> dict:
        return {
            "layers": {str(j): flag for j, flag in sorted(self.layers.items())},
            "inactive": self.inactive,
            "witness": self.witness,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def classify(arch, theta) -> InactivityReport:
    arch = as_arch(arch)
    theta = check_theta(arch, theta)
    offsets = layer_offsets(arch)
    return InactivityReport({
        j: bool(np.all(theta[offsets[j - 1]:offsets[j]] < 0.0)) for j in range(2, arch.depth)
    })


def inactive_mask(arch, thetas: np.ndarray) -> np.ndarray:
    """Row-wise membership in the inactive union for a ``(S, P)`` stack of parameter vectors."""
    arch = as_arch(arch)
    offsets = layer_offsets(arch)
    thetas = np.asarray(thetas)
    hit = np.zeros(thetas.shape[0], dtype=bool)
    for j in range(2, arch.depth):
        hit |= np.all(thetas[:, offsets[j - 1]:offsets[j]] < 0.0, axis=1)
    return hit


def assert_constant_realization(arch, theta, probe_inputs, rng: Optional[np.random.Generator] = None,
                                perturbations: int = 1) -> bool:
    """Check that the realization is bitwise constant over the probes.

    Also redraws every coordinate up to the end of the witness layer's block
    (keeping that block negative, leaving later coordinates untouched) and checks
    that the perturbed network computes the same constant.
    """
    arch = as_arch(arch)
    theta = check_theta(arch, theta)
    report = classify(arch, theta)
    if not report.inactive:
        raise ValueError("parameter vector is not in the inactive region")
    if rng is None:
        rng = np.random.default_rng(0)
    probes = np.asarray(probe_inputs, dtype=np.float64).reshape(-1, arch.input_dim)
    ref = realize(arch, theta, np.zeros(arch.input_dim))
    if not np.array_equal(realize(arch, theta, probes), np.broadcast_to(ref, (probes.shape[0], ref.shape[0]))):
        return False

    offsets = layer_offsets(arch)
    j = report.witness
    lo, hi = offsets[j - 1], offsets[j]
    for _ in range(perturbations):
        other = theta.copy()
        other[:lo] = rng.normal(0.0, 1.0 + np.abs(theta[:lo]), size=lo)
        other[lo:hi] = -rng.uniform(1e-3, 3.0, size=hi - lo)
        got = realize(arch, other, probes)
        if not np.array_equal(got, np.broadcast_to(ref, got.shape)):
            return False
        if not np.array_equal(realize(arch, other, np.zeros(arch.input_dim)), ref):
            return False
    return True


@dataclass
class FloorEstimate:
    value: float
    half_width: float
    exact: bool
    n_samples: int = 0
    median: Optional[float] = None


def estimate_risk_floor(data: DataModel, n_samples: int = 200_000,
                        rng: Optional[np.random.Generator] = None) -> FloorEstimate:
    """``inf_b E|b - E(X)|``: closed form if the model has one, else sample median and mean absolute deviation."""
    if data.floor_exact is not None:
        return FloorEstimate(float(data.floor_exact), 0.0, True)
    if rng is None:
        rng = np.random.default_rng(0)
    targets = data.sample_targets(rng, n_samples)
    med = float(np.median(targets))
    dev = np.abs(targets - med)
    half = 3.0 * float(dev.std(ddof=1)) / math.sqrt(n_samples)
    return FloorEstimate(float(dev.mean()), half, False, n_samples, med)


def risk_floor(data: DataModel, n_samples: int = 200_000, rng: Optional[np.random.Generator] = None) -> float:
    return estimate_risk_floor(data, n_samples, rng).value


def persistence_violations(ts) -> list[tuple[int, int, int]]:
    """``(n, t, j)`` for each iterate that left a layer region its trajectory started in."""
    arch = ts.config.arch
    offsets = layer_offsets(arch)
    bad = []
    for n in range(1, ts.N + 1):
        traj = ts.trajectory(n)
        start = classify(arch, traj[0])
        for j, flag in start.layers.items():
            if not flag:
                continue
            block = traj[:, offsets[j - 1]:offsets[j]]
            ok = np.all(block < 0.0, axis=1)
            bad.extend((n, int(t), j) for t in np.flatnonzero(~ok))
    return bad


def persistence_audit(ts) -> bool:
    return not persistence_violations(ts)
