"""Forward-pass behaviour and shape rules of the layer kinds."""
import numpy as np
import pytest

from hetsim import nn
from hetsim.nn import (
    Conv2D,
    Dense,
    Dropout,
    BranchDropout,
    Flatten,
    MaxPool2D,
    ReLU,
    ShapeError,
    Softmax,
    build_layout,
    forward_chain,
    make_keyed,
)
from hetsim.nn.params import ParamStore


def _store_for(layers, input_shape):
    keyed = make_keyed("net", layers)
    return keyed, ParamStore(build_layout(keyed, input_shape))


def test_dense_affine_identity():
    keyed, store = _store_for([Dense(1)], (1,))
    store.view((("net", 0), "w"))[...] = [[2.0]]
    store.view((("net", 0), "b"))[...] = [1.0]
    out, _ = forward_chain(keyed, store, np.array([[3.0]]))
    np.testing.assert_allclose(out, [[7.0]])


def test_relu_definition():
    keyed, store = _store_for([ReLU()], (3,))
    out, _ = forward_chain(keyed, store, np.array([[-1.0, 0.0, 2.0]]))
    np.testing.assert_array_equal(out, [[0.0, 0.0, 2.0]])


def test_softmax_symmetry():
    keyed, store = _store_for([Softmax()], (2,))
    out, _ = forward_chain(keyed, store, np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(out, [[0.5, 0.5]])


def test_softmax_sums_to_one():
    rng = np.random.default_rng(7)
    keyed, store = _store_for([Softmax()], (11,))
    out, _ = forward_chain(keyed, store, rng.normal(size=(40, 11)) * 10)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_flatten_then_dense_shapes():
    layers = [Flatten(), Dense(4)]
    keyed, store = _store_for(layers, (2, 3, 1))
    out, _ = forward_chain(keyed, store, np.zeros((5, 2, 3, 1)))
    assert out.shape == (5, 4)


def test_dense_on_image_without_flatten_is_an_error():
    with pytest.raises(ShapeError):
        nn.count_parameters([Conv2D(3, 3, 32), Dense(10)], (16, 16, 32))


def test_conv_valid_output_shape():
    assert nn.output_shape(Conv2D(8, 8, 32, stride=4), (84, 84, 4)) == (20, 20, 32)
    assert nn.output_shape(Conv2D(4, 4, 64, stride=2), (20, 20, 32)) == (9, 9, 64)


def test_conv_known_values():
    # 2x2 input, 2x2 kernel of ones -> single output = sum of inputs + bias
    keyed, store = _store_for([Conv2D(2, 2, 1)], (2, 2, 1))
    store.view((("net", 0), "w"))[...] = np.ones((2, 2, 1, 1))
    store.view((("net", 0), "b"))[...] = [0.5]
    x = np.arange(4.0).reshape(1, 2, 2, 1)
    out, _ = forward_chain(keyed, store, x)
    np.testing.assert_allclose(out, [[[[6.5]]]])


def test_maxpool_windows_and_remainder():
    keyed, store = _store_for([MaxPool2D(2, 2)], (5, 5, 1))
    x = np.arange(25.0).reshape(1, 5, 5, 1)
    out, _ = forward_chain(keyed, store, x)
    # stride == window: disjoint 2x2 blocks, last row/col dropped (VALID)
    np.testing.assert_array_equal(out[0, :, :, 0], [[6.0, 8.0], [16.0, 18.0]])


def test_dropout_eval_is_identity_and_train_scales():
    keyed, store = _store_for([Dropout(0.5)], (1000,))
    x = np.ones((1, 1000))
    out_eval, _ = forward_chain(keyed, store, x, mode="eval")
    np.testing.assert_array_equal(out_eval, x)
    rng = np.random.default_rng(3)
    out_train, _ = forward_chain(keyed, store, x, mode="train", rng=rng)
    kept = out_train[out_train > 0]
    assert np.allclose(kept, 2.0)  # inverted scaling 1/(1-p)
    assert 0.4 < kept.size / 1000 < 0.6


def test_branch_dropout_is_all_or_nothing_per_sample():
    keyed, store = _store_for([BranchDropout(0.5)], (8,))
    x = np.ones((64, 8))
    rng = np.random.default_rng(11)
    out, _ = forward_chain(keyed, store, x, mode="train", rng=rng)
    per_sample = out.sum(axis=1)
    assert set(np.round(per_sample, 12)) <= {0.0, 16.0}  # dropped or scaled by 2
    assert (per_sample == 0).any() and (per_sample > 0).any()


def test_branch_dropout_p1_zeroes_everything():
    keyed, store = _store_for([BranchDropout(1.0)], (4,))
    out, _ = forward_chain(keyed, store, np.ones((3, 4)), mode="train",
                           rng=np.random.default_rng(0))
    np.testing.assert_array_equal(out, np.zeros((3, 4)))


def test_dropout_p_validation():
    with pytest.raises(ValueError):
        Dropout(1.0)
    BranchDropout(1.0)  # allowed
    with pytest.raises(ValueError):
        BranchDropout(1.5)


def test_eval_forward_is_pure():
    rng = np.random.default_rng(5)
    layers = [Dense(8), ReLU(), Dropout(0.3), Dense(3), Softmax()]
    keyed = make_keyed("net", layers)
    store = ParamStore(build_layout(keyed, (6,)))
    nn.init_chain_params(keyed, (6,), store, rng)
    x = rng.normal(size=(4, 6))
    a, _ = forward_chain(keyed, store, x, mode="eval")
    b, _ = forward_chain(keyed, store, x, mode="eval")
    assert np.array_equal(a, b)


def test_non_finite_input_is_surfaced():
    keyed, store = _store_for([ReLU()], (2,))
    with pytest.raises(nn.NonFiniteError):
        forward_chain(keyed, store, np.array([[1.0, np.nan]]))


def test_operation_estimate_is_positive_and_monotone():
    small = nn.count_operations([Dense(4)], (8,))
    large = nn.count_operations([Dense(4), Dense(4)], (8,))
    assert 0 < small < large
