import numpy as np
import pytest

from deskdrive.errors import ShapeError, StateError
from deskdrive.net import (LayerSpec, batchnorm, conv2d, dense, dropout,
                           flatten, init_layer_params, layer_backward,
                           layer_forward, lstm, maxpool, output_shape, relu,
                           softmax, time_distributed)

RNG = np.random.default_rng(1234)


class TestSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            LayerSpec("fourier")

    def test_dropout_rate_range(self):
        with pytest.raises(ValueError):
            dropout(1.0)
        dropout(0.0)

    def test_stride_positive(self):
        with pytest.raises(ValueError):
            LayerSpec("conv2d", kernel=3, stride=0, filters=2)

    def test_spec_dict_round_trip(self):
        spec = time_distributed(conv2d(4, 3, 2), relu(), flatten())
        back = LayerSpec.from_dict(spec.to_dict())
        assert back == spec


# one row per case: spec, input sample shape, expected output sample shape
SHAPE_CASES = [
    (conv2d(8, 3, 2), (150, 150, 3), (74, 74, 8)),
    (conv2d(8, 3, 1), (64, 64, 3), (62, 62, 8)),
    (conv2d(4, 5, 3), (20, 17, 2), (6, 5, 4)),
    (conv2d(1, 1, 1), (4, 4, 7), (4, 4, 1)),
    (maxpool(2, 2), (62, 62, 8), (31, 31, 8)),
    (maxpool(2, 2), (29, 29, 16), (14, 14, 16)),
    (maxpool(3, 2), (10, 10, 2), (4, 4, 2)),
    (maxpool(2, 1), (5, 5, 1), (4, 4, 1)),
    (relu(), (9, 9, 3), (9, 9, 3)),
    (relu(), (17,), (17,)),
    (batchnorm(), (12, 12, 4), (12, 12, 4)),
    (batchnorm(), (33,), (33,)),
    (dropout(0.5), (6, 6, 2), (6, 6, 2)),
    (softmax(), (10,), (10,)),
    (flatten(), (4, 4, 3), (48,)),
    (flatten(), (7,), (7,)),
    (dense(10), (128,), (10,)),
    (dense(1), (32,), (1,)),
    (lstm(32, return_sequences=True), (5, 151), (5, 32)),
    (lstm(32, return_sequences=False), (5, 151), (32,)),
    (time_distributed(conv2d(2, 3, 1), relu(), flatten()), (4, 8, 8, 1), (4, 72)),
    (time_distributed(dense(6)), (3, 11), (3, 6)),
]


class TestShapeAlgebra:
    @pytest.mark.parametrize("spec,inp,out", SHAPE_CASES)
    def test_output_shape_table(self, spec, inp, out):
        assert output_shape(spec, inp) == out

    @pytest.mark.parametrize("spec,inp,out", SHAPE_CASES)
    def test_forward_agrees_with_shape(self, spec, inp, out):
        params = init_layer_params(spec, inp, np.random.default_rng(0))
        x = RNG.normal(size=(2,) + inp)
        y, _ = layer_forward(spec, params, x, mode="train",
                             rng=np.random.default_rng(1))
        assert y.shape == (2,) + out

    def test_kernel_too_big(self):
        with pytest.raises(ShapeError):
            output_shape(conv2d(2, 7, 1), (5, 5, 1))
        with pytest.raises(ShapeError):
            output_shape(maxpool(4, 4), (3, 3, 1))

    def test_dense_needs_flat(self):
        with pytest.raises(ShapeError):
            output_shape(dense(3), (4, 4, 1))


class TestForwardSemantics:
    def test_conv_shape_rule_matches_paper_arch(self):
        # stride-2 3x3 conv on a 150x150 image -> 74x74
        assert output_shape(conv2d(8, 3, 2), (150, 150, 3))[0] == 74

    def test_relu(self):
        y, _ = layer_forward(relu(), {}, np.array([[-1.0, 0.0, 2.0]]))
        assert np.array_equal(y, [[0.0, 0.0, 2.0]])

    def test_softmax_symmetry(self):
        y, _ = layer_forward(softmax(), {}, np.array([[0.0, 0.0]]))
        assert np.allclose(y, [[0.5, 0.5]])

    def test_softmax_sums_to_one_and_positive(self):
        x = RNG.normal(scale=40, size=(6, 10))  # large logits stress stability
        y, _ = layer_forward(softmax(), {}, x)
        assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)
        assert (y > 0).all()

    def test_maxpool_values(self):
        x = np.arange(16.0).reshape(1, 4, 4, 1)
        y, _ = layer_forward(maxpool(2, 2), {}, x)
        assert np.array_equal(y[0, :, :, 0], [[5, 7], [13, 15]])

    def test_dropout_infer_identity(self):
        x = RNG.normal(size=(3, 7))
        y, _ = layer_forward(dropout(0.5), {}, x, mode="infer")
        assert np.array_equal(y, x)

    def test_dropout_train_scales_survivors(self):
        x = np.ones((1, 10_000))
        y, _ = layer_forward(dropout(0.25), {}, x, mode="train",
                             rng=np.random.default_rng(3))
        kept = y[y > 0]
        assert np.allclose(kept, 1.0 / 0.75)
        assert abs((y > 0).mean() - 0.75) < 0.02

    def test_dropout_train_needs_rng(self):
        with pytest.raises(StateError):
            layer_forward(dropout(0.5), {}, np.ones((1, 4)), mode="train")

    def test_dense_shape_error_names_shapes(self):
        params = init_layer_params(dense(3), (4,), np.random.default_rng(0))
        with pytest.raises(ShapeError, match="4"):
            layer_forward(dense(3), params, np.ones((2, 5)))

    def test_batchnorm_infer_independent_of_batch(self):
        spec = batchnorm()
        params = init_layer_params(spec, (5,), np.random.default_rng(0))
        params["running_mean"] = RNG.normal(size=5)
        params["running_var"] = RNG.uniform(0.5, 2.0, 5)
        sample = RNG.normal(size=5)
        alone, _ = layer_forward(spec, params, sample[None], mode="infer")
        batch = np.vstack([sample, RNG.normal(size=(4, 5))])
        together, _ = layer_forward(spec, params, batch, mode="infer")
        assert np.array_equal(alone[0], together[0])

    def test_batchnorm_train_normalizes(self):
        spec = batchnorm()
        params = init_layer_params(spec, (3,), np.random.default_rng(0))
        x = RNG.normal(loc=5.0, scale=3.0, size=(64, 3))
        y, _ = layer_forward(spec, params, x, mode="train")
        assert np.allclose(y.mean(axis=0), 0.0, atol=1e-9)
        assert np.allclose(y.std(axis=0), 1.0, atol=1e-2)


class TestBackwardSemantics:
    def test_relu_subgradient_zero_at_zero(self):
        x = np.array([[-1.0, 0.0, 2.0]])
        _, cache = layer_forward(relu(), {}, x)
        gin, _ = layer_backward(relu(), {}, cache, np.ones_like(x))
        assert np.array_equal(gin, [[0.0, 0.0, 1.0]])

    def test_dense_zero_grad(self):
        spec = dense(3)
        params = init_layer_params(spec, (4,), np.random.default_rng(0))
        x = RNG.normal(size=(2, 4))
        _, cache = layer_forward(spec, params, x)
        gin, gp = layer_backward(spec, params, cache, np.zeros((2, 3)))
        assert not gin.any() and not gp["w"].any() and not gp["b"].any()

    def test_dropout_backward_uses_same_mask(self):
        spec = dropout(0.5)
        x = RNG.normal(size=(2, 50))
        y, cache = layer_forward(spec, {}, x, mode="train",
                                 rng=np.random.default_rng(7))
        gin, _ = layer_backward(spec, {}, cache, np.ones_like(x))
        assert np.array_equal(gin != 0, y != 0)
