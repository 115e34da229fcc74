"""Branched topologies: golden parameter counts, partitioning, cascading."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetsim import (
    build_cascaded,
    build_share_first,
    concat_parameters,
    count_parameters,
    partition_parameters,
    split_gradient,
)
from hetsim.nn import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2D,
    ReLU,
    ShapeError,
    Softmax,
    cross_entropy,
)
from hetsim.topology import DeviceNetwork, ParameterPartition


def atari_topology():
    stem = [Conv2D(8, 8, 32, stride=4), ReLU(), Conv2D(4, 4, 64, stride=2), ReLU()]
    complex_branch = [Conv2D(3, 3, 64), ReLU(), Flatten(), Dense(512), ReLU(), Dense(6)]
    light_branch = [Conv2D(3, 3, 8), ReLU(), Flatten(), Dense(64), ReLU(), Dense(6)]
    return build_share_first(stem, {"complex": complex_branch,
                                    "lightweight": light_branch}, (84, 84, 4))


def cifar_stem():
    return [Conv2D(3, 3, 32), ReLU(), Conv2D(3, 3, 32), ReLU(),
            MaxPool2D(2, 2), Dropout(0.25)]


def cifar_light_branch():
    return [MaxPool2D(2, 2), Dropout(0.5), Flatten(), Dense(10), Softmax()]


def cifar_complex_branch_logits():
    return [Conv2D(3, 3, 64), ReLU(), Conv2D(3, 3, 64), ReLU(), MaxPool2D(2, 2),
            Dropout(0.25), Flatten(), Dense(512), ReLU(), Dropout(0.25), Dense(10)]


def cifar_share_first():
    complex_branch = cifar_complex_branch_logits() + [Softmax()]
    return build_share_first(cifar_stem(), {"complex": complex_branch,
                                            "lightweight": cifar_light_branch()},
                             (32, 32, 3))


def cifar_cascaded(p=0.5):
    return build_cascaded(cifar_stem(), cifar_complex_branch_logits(),
                          cifar_light_branch(), p, (32, 32, 3))


# -- golden parameter counts --------------------------------------------------

def test_golden_count_atari_complex():
    assert count_parameters(atari_topology(), "complex") == 1_687_206


def test_golden_count_atari_lightweight():
    assert count_parameters(atari_topology(), "lightweight") == 71_214


def test_golden_count_cifar_lightweight():
    assert count_parameters(cifar_share_first(), "lightweight") == 25_834
    assert count_parameters(cifar_cascaded(), "lightweight") == 25_834


def test_two_branch_heads_have_matching_output_sizes():
    topo = atari_topology()
    assert topo.branch_output_shape("complex") == (6,)
    assert topo.branch_output_shape("lightweight") == (6,)


# -- construction and validation ----------------------------------------------

def test_empty_stem_degenerates_to_plain_network():
    topo = build_share_first([], {"only": [Dense(3), Softmax()]}, (4,))
    part = partition_parameters(topo, "only")
    assert part.shared_len == 0
    assert part.local_len == 4 * 3 + 3


def test_stem_branch_seam_shape_error():
    with pytest.raises(ShapeError):
        build_share_first([Conv2D(3, 3, 32)], {"bad": [Dense(10)]}, (16, 16, 4))


def test_unknown_branch_rejected():
    topo = atari_topology()
    with pytest.raises(KeyError):
        partition_parameters(topo, "nope")


def test_cascade_requires_matching_logits():
    with pytest.raises(ShapeError):
        build_cascaded([Dense(8), ReLU()], [Dense(5)], [Dense(3), Softmax()], 0.5, (4,))


def test_cascade_light_branch_must_end_in_softmax():
    with pytest.raises(ShapeError):
        build_cascaded([Dense(8), ReLU()], [Dense(3)], [Dense(3)], 0.5, (4,))


# -- partitioning ---------------------------------------------------------------

def test_share_first_cifar_shared_is_stem():
    part = partition_parameters(cifar_share_first(), "complex")
    assert part.shared_len == 896 + 9_248  # the two stem convolutions
    part_light = partition_parameters(cifar_share_first(), "lightweight")
    assert part_light.shared_len == 10_144


def test_cascade_shares_the_whole_lightweight_network():
    topo = cifar_cascaded()
    for branch in ("complex", "lightweight"):
        assert partition_parameters(topo, branch).shared_len == 25_834
    assert partition_parameters(topo, "lightweight").local_len == 0
    complex_part = partition_parameters(topo, "complex")
    assert complex_part.shared_len + complex_part.local_len == \
        count_parameters(topo, "complex")


def test_split_canonical_order_stem_first():
    part = ParameterPartition("b", 2, 3)
    shared, local = split_gradient(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), part)
    np.testing.assert_array_equal(shared, [1.0, 2.0])
    np.testing.assert_array_equal(local, [3.0, 4.0, 5.0])


def test_split_wrong_length_rejected():
    part = ParameterPartition("b", 2, 3)
    with pytest.raises(ValueError):
        split_gradient(np.zeros(4), part)
    with pytest.raises(ValueError):
        concat_parameters(np.zeros(3), np.zeros(1), part)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 12), st.integers(0, 12), st.integers(0, 2**31 - 1))
def test_concat_split_roundtrip_property(shared_len, local_len, seed):
    part = ParameterPartition("b", shared_len, local_len)
    x = np.random.default_rng(seed).normal(size=shared_len + local_len)
    shared, local = split_gradient(x, part)
    assert np.array_equal(concat_parameters(local, shared, part), x)


# -- device networks and cascade behaviour -------------------------------------

def small_cascade(p):
    stem = [Dense(8), ReLU()]
    complex_branch = [Dense(6), ReLU(), Dense(4)]
    light_branch = [Dense(4), Softmax()]
    return build_cascaded(stem, complex_branch, light_branch, p, (5,))


def test_cascaded_p0_includes_both_branches():
    topo = small_cascade(0.0)
    net = DeviceNetwork(topo, "complex")
    store = net.init_store(np.random.default_rng(0), np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(6, 5))
    out_train, _ = net.forward(store, x, mode="train", rng=np.random.default_rng(3))
    out_eval, _ = net.forward(store, x, mode="eval")
    np.testing.assert_allclose(out_train, out_eval)  # p=0: mask is all-keep, scale 1


def test_cascaded_p1_equals_standalone_lightweight_bitwise():
    topo = small_cascade(1.0)
    complex_net = DeviceNetwork(topo, "complex")
    light_net = DeviceNetwork(topo, "lightweight")
    store_c = complex_net.init_store(np.random.default_rng(0), np.random.default_rng(1))
    store_l = light_net.init_store(np.random.default_rng(0))
    # stores agree on the shared block by construction
    s = light_net.partition.shared_len
    assert np.array_equal(store_c.flat[:s], store_l.flat[:s])
    x = np.random.default_rng(2).normal(size=(100, 5))
    out_c, _ = complex_net.forward(store_c, x, mode="train", rng=np.random.default_rng(3))
    out_l, _ = light_net.forward(store_l, x, mode="eval")
    assert np.array_equal(out_c, out_l)


def test_cascaded_dropped_branch_gets_zero_gradient():
    topo = small_cascade(1.0)
    net = DeviceNetwork(topo, "complex")
    store = net.init_store(np.random.default_rng(0), np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(8, 5))
    labels = np.random.default_rng(4).integers(0, 4, size=8)
    out, cache = net.forward(store, x, mode="train", rng=np.random.default_rng(3))
    _, dlogits = cross_entropy(out, labels)
    grads = net.backward(cache, dlogits, store, from_logits=True)
    s = net.partition.shared_len
    local_grads = grads.flat[s:]
    assert local_grads.size > 0
    np.testing.assert_array_equal(local_grads, np.zeros_like(local_grads))
    # the shared (stem + lightweight) side still learns
    assert np.abs(grads.flat[:s]).max() > 0


def test_lightweight_standalone_equals_cascade_under_forced_drop_all_inputs():
    topo = small_cascade(1.0)
    complex_net = DeviceNetwork(topo, "complex")
    light_net = DeviceNetwork(topo, "lightweight")
    store_c = complex_net.init_store(np.random.default_rng(10), np.random.default_rng(11))
    store_l = light_net.init_store(np.random.default_rng(10))
    rng = np.random.default_rng(12)
    for _ in range(5):
        x = rng.normal(size=(20, 5))
        out_c, _ = complex_net.forward(store_c, x, mode="train", rng=rng)
        out_l, _ = light_net.forward(store_l, x, mode="eval")
        assert np.array_equal(out_c, out_l)


def test_canonical_layout_is_stable_across_runs():
    a = DeviceNetwork(cifar_cascaded(), "complex").layout
    b = DeviceNetwork(cifar_cascaded(), "complex").layout
    assert a == b
    names = [key for key, _ in a]
    # shared block: stem first, then the lightweight branch, then local complex
    stem_count = sum(1 for (scope, _), _n in names if scope == "stem")
    assert all(scope == "stem" for (scope, _), _n in names[:stem_count])
