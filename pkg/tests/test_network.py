import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgd_inactivity.network import (
    CLIP,
    IDENTITY,
    Architecture,
    ReadOut,
    affine_apply,
    forward_trace,
    layer_offsets,
    param_count,
    params_from_bytes,
    params_from_json,
    params_to_bytes,
    params_to_json,
    read_out,
    realize,
)

from conftest import random_arch, random_inactive

archs = st.lists(st.integers(1, 6), min_size=2, max_size=9)


@pytest.mark.parametrize("dims, expected", [
    ((1, 1), 2),
    ((3, 5, 1), 26),
    ((1,) * 9, 16),
])
def test_param_count(dims, expected):
    assert param_count(dims) == expected


@pytest.mark.parametrize("dims, expected", [
    ((1, 1), [0, 2]),
    ((3, 5, 1), [0, 20, 26]),
    ((1, 2, 2, 1), [0, 4, 10, 13]),
])
def test_layer_offsets(dims, expected):
    assert layer_offsets(dims) == expected


@given(archs)
def test_offsets_end_at_param_count(dims):
    offsets = layer_offsets(dims)
    assert offsets[-1] == param_count(dims)
    assert all(a < b for a, b in zip(offsets, offsets[1:]))


def test_architecture_validation():
    with pytest.raises(ValueError):
        Architecture([3])
    with pytest.raises(ValueError):
        Architecture([2, 0, 1])
    assert Architecture([2, 3, 1]).depth == 2
    assert Architecture([2, 3, 4, 1]).max_hidden_width == 4
    with pytest.raises(ValueError):
        Architecture([2, 3, 2]).require_scalar_output()


def test_affine_apply_examples():
    assert affine_apply([2.0, 3.0], 0, 1, 1, [5.0]).tolist() == [13.0]
    assert affine_apply(np.zeros(12), 0, 3, 3, [1.0, -2.0, 7.0]).tolist() == [0.0, 0.0, 0.0]
    a, b = 0.375, -1.25
    assert affine_apply([1, 0, 0, 1, 0, 0], 0, 2, 2, [a, b]).tolist() == [a, b]


def test_affine_apply_out_of_range():
    with pytest.raises(IndexError):
        affine_apply(np.zeros(5), 0, 2, 2, [1.0, 1.0])
    with pytest.raises(IndexError):
        affine_apply(np.zeros(10), 7, 2, 1, [1.0])


def test_affine_layout_round_trip(rng):
    for _ in range(50):
        arch = random_arch(rng, 1, 5, 6)
        dims = arch.dims
        offsets = layer_offsets(arch)
        theta = np.empty(param_count(arch))
        mats = []
        for j in range(1, len(dims)):
            w = rng.normal(size=(dims[j], dims[j - 1]))
            b = rng.normal(size=dims[j])
            theta[offsets[j - 1]:offsets[j]] = np.concatenate([w.ravel(), b])
            mats.append((w, b))
        for j, (w, b) in enumerate(mats, start=1):
            x = rng.normal(size=dims[j - 1])
            expected = [sum(w[i, k] * x[k] for k in range(dims[j - 1])) + b[i] for i in range(dims[j])]
            np.testing.assert_array_equal(affine_apply(theta, offsets[j - 1], dims[j], dims[j - 1], x), expected)


def test_realize_hand_trace():
    theta = [1.0, 0.0, 1.0, 0.0]
    assert realize((1, 1, 1), theta, [-2.0]).tolist() == [0.0]
    assert realize((1, 1, 1), theta, [3.0]).tolist() == [3.0]
    assert realize((3, 4, 2), np.zeros(param_count((3, 4, 2))), [1.0, 2.0, 3.0]).tolist() == [0.0, 0.0]


def test_realize_no_relu_after_last_layer():
    # last layer weight -1: output may be negative
    assert realize((1, 1, 1), [1.0, 0.0, -1.0, 0.0], [3.0]).tolist() == [-3.0]


def test_realize_batch_matches_rows(rng):
    arch = Architecture([3, 4, 4, 1])
    theta = rng.normal(size=param_count(arch))
    x = rng.normal(size=(7, 3))
    batched = realize(arch, theta, x)
    for i in range(7):
        np.testing.assert_array_equal(batched[i], realize(arch, theta, x[i]))


def test_realize_dimension_mismatch():
    with pytest.raises(ValueError):
        realize((2, 1), np.zeros(3), [1.0])
    with pytest.raises(ValueError):
        realize((2, 1), np.zeros(4), [1.0, 2.0])


def test_inactive_layer_gives_constant_output(rng):
    arch = Architecture([2, 3, 3, 1])
    theta = rng.normal(size=param_count(arch))
    offsets = layer_offsets(arch)
    theta[offsets[1]:offsets[2]] = -np.abs(theta[offsets[1]:offsets[2]]) - 0.1
    out = realize(arch, theta, rng.uniform(-5, 5, size=(50, 2)))
    assert np.all(out == out[0])


def test_inactive_realization_bitwise_constant(rng):
    for _ in range(100):
        arch, theta, _ = random_inactive(rng)
        out = realize(arch, theta, rng.normal(0, 3, size=(20, arch.input_dim)))
        assert np.array_equal(out, np.broadcast_to(out[0], out.shape))


def test_positive_homogeneity_bias_free():
    rng = np.random.default_rng(7)
    arch = Architecture([3, 5, 1])
    offsets = layer_offsets(arch)
    for _ in range(50):
        # dyadic weights and inputs keep every product exact
        theta = rng.integers(-8, 9, size=param_count(arch)) / 8.0
        theta[15:20] = 0.0  # hidden biases
        theta[offsets[2] - 1] = 0.0  # output bias
        x = rng.integers(-16, 17, size=3) / 16.0
        for lam in (0.0, 0.5, 2.0, 4.0):
            assert realize(arch, theta, lam * x)[0] == lam * realize(arch, theta, x)[0]


def test_forward_trace_examples(rng):
    tr = forward_trace((1, 1, 1), [1.0, 0.0, 1.0, 0.0], [3.0])
    assert tr.pre[0].tolist() == [3.0]
    assert tr.post[0].tolist() == [3.0]
    assert tr.output.tolist() == [3.0]
    tr = forward_trace((2, 3, 1), np.zeros(13), [0.5, 0.5])
    assert all(not v.any() for v in tr.pre + tr.post)
    for _ in range(100):
        arch = random_arch(rng, 1, 5, 5)
        theta = rng.normal(size=param_count(arch))
        x = rng.normal(size=arch.input_dim)
        np.testing.assert_array_equal(forward_trace(arch, theta, x).output, realize(arch, theta, x))


@pytest.mark.parametrize("y, expected", [(1.7, 1.0), (-0.3, 0.0), (0.42, 0.42)])
def test_clip(y, expected):
    assert read_out(CLIP, y) == expected
    assert read_out(IDENTITY, y) == y


def test_readout_validation():
    with pytest.raises(ValueError):
        ReadOut("clip", 1.0, 1.0)
    with pytest.raises(ValueError):
        ReadOut("tanh")
    assert ReadOut.from_config({"kind": "clip", "lo": -1, "hi": 2})(5.0) == 2.0
    np.testing.assert_array_equal(CLIP.derivative([0.0, 0.5, 1.0, 2.0]), [0.0, 1.0, 0.0, 0.0])


@settings(max_examples=50)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=True, width=64), max_size=40))
def test_param_serialization_round_trip(values):
    theta = np.array(values, dtype=np.float64)
    np.testing.assert_array_equal(params_from_bytes(params_to_bytes(theta)), theta)
    finite = theta[np.isfinite(theta)]
    np.testing.assert_array_equal(params_from_json(params_to_json(finite)), finite)


def test_binary_layout_is_documented_format():
    blob = params_to_bytes([1.5, -2.0])
    assert blob[:8] == (2).to_bytes(8, "little")
    assert np.frombuffer(blob[8:], "<f8").tolist() == [1.5, -2.0]
    with pytest.raises(ValueError):
        params_from_bytes(blob[:-1])


def test_architecture_json():
    arch = Architecture([1, 2, 2, 1])
    assert arch.to_json() == "[1, 2, 2, 1]"
    assert Architecture.from_json(arch.to_json()) == arch
