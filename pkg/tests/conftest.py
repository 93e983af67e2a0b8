import numpy as np
import pytest

from sgd_inactivity.gradient import Batch
from sgd_inactivity.network import Architecture, layer_offsets, param_count


def random_arch(rng, min_depth=1, max_depth=4, max_width=5, out=1):
    depth = int(rng.integers(min_depth, max_depth + 1))
    return Architecture([int(rng.integers(1, max_width + 1)) for _ in range(depth)] + [out])


def random_batch(rng, arch, m=None):
    m = int(rng.integers(1, 9)) if m is None else m
    return Batch(rng.uniform(0, 1, size=(m, arch.input_dim)), rng.uniform(0, 1, size=m))


def force_inactive(rng, arch, theta, j):
    """Copy of ``theta`` whose layer-``j`` block is strictly negative."""
    offsets = layer_offsets(arch)
    out = np.array(theta, dtype=np.float64)
    out[offsets[j - 1]:offsets[j]] = -rng.uniform(1e-3, 2.0, size=offsets[j] - offsets[j - 1])
    return out


def random_inactive(rng, min_depth=3, max_depth=10, max_width=5):
    """Random architecture and parameter vector with at least one interior layer switched off."""
    arch = random_arch(rng, min_depth, max_depth, max_width)
    theta = rng.normal(0, 1.5, size=param_count(arch))
    j = int(rng.integers(2, arch.depth))
    return arch, force_inactive(rng, arch, theta, j), j


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
