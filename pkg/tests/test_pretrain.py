import math

import numpy as np
import pytest

from snapvote import nn, pretrain
from snapvote.errors import ShapeError
from snapvote.gradcheck import numerical_gradient, relative_error
from snapvote.nn import LayerSpec, Network
from snapvote.pretrain import PretrainConfig


def scalar_reconstruction_loss(layer, clean, corrupted):
    """Cross-entropy reconstruction loss with explicit loops."""
    W, W_dec = layer.W, layer.decoder_weights()
    d_in, d_hid = W.shape
    total = 0.0
    for x, xt in zip(clean, corrupted):
        h = [1.0 / (1.0 + math.exp(-(layer.b_enc[j] + sum(xt[i] * W[i, j] for i in range(d_in)))))
             for j in range(d_hid)]
        for i in range(d_in):
            r = 1.0 / (1.0 + math.exp(-(layer.b_dec[i] + sum(h[j] * W_dec[j, i] for j in range(d_hid)))))
            total -= x[i] * math.log(r) + (1.0 - x[i]) * math.log(1.0 - r)
    return total


class TestCorrupt:
    def test_level_zero_is_identity(self):
        x = np.random.default_rng(0).random((5, 4))
        np.testing.assert_array_equal(pretrain.corrupt(x, 0.0, np.random.default_rng(1)), x)

    def test_zeroed_fraction(self):
        x = np.ones((1000, 1000))
        out = pretrain.corrupt(x, 0.25, np.random.default_rng(2))
        assert abs(np.mean(out == 0.0) - 0.25) < 0.002

    def test_zeros_unchanged(self):
        x = np.zeros((20, 20))
        np.testing.assert_array_equal(pretrain.corrupt(x, 0.9, np.random.default_rng(3)), x)

    def test_surviving_entries_are_exact(self):
        x = np.random.default_rng(4).random((50, 50)) + 0.1
        out = pretrain.corrupt(x, 0.4, np.random.default_rng(5))
        kept = out != 0
        np.testing.assert_array_equal(out[kept], x[kept])

    def test_level_one_rejected(self):
        with pytest.raises(ValueError):
            pretrain.corrupt(np.ones(3), 1.0, np.random.default_rng(0))


class TestDaeLoss:
    @pytest.mark.parametrize("tied", [True, False])
    def test_loss_matches_scalar_loops(self, tied):
        rng = np.random.default_rng(0)
        layer = pretrain.init_dae(5, 3, rng, tied=tied)
        layer.b_enc = rng.normal(size=3)
        clean = rng.random((4, 5))
        noisy = pretrain.corrupt(clean, 0.3, rng)
        loss, _ = pretrain.dae_loss_and_grads(layer, clean, noisy)
        assert loss == pytest.approx(scalar_reconstruction_loss(layer, clean, noisy), rel=1e-12)

    @pytest.mark.parametrize("tied", [True, False])
    def test_gradients_match_finite_differences(self, tied):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            layer = pretrain.init_dae(6, 4, rng, tied=tied)
            layer.b_enc = rng.normal(0, 0.5, size=4)
            layer.b_dec = rng.normal(0, 0.5, size=6)
            clean = rng.random((5, 6))
            noisy = pretrain.corrupt(clean, 0.25, rng)
            _, grads = pretrain.dae_loss_and_grads(layer, clean, noisy)
            numeric = numerical_gradient(
                lambda: pretrain.reconstruction_loss(layer, clean, noisy), layer.params())
            for a, n in zip(grads, numeric):
                assert relative_error(a, n) < 1e-5


class TestTrainLayer:
    def test_zero_epochs_returns_initialisation(self):
        X = np.random.default_rng(0).random((20, 5))
        cfg = PretrainConfig(hidden_sizes=(3,), epochs=0, seed=7)
        layer = pretrain.train_dae_layer(X, 3, cfg)
        fresh = pretrain.init_dae(5, 3, pretrain.layer_rng(7, 0))
        np.testing.assert_array_equal(layer.W, fresh.W)
        np.testing.assert_array_equal(layer.b_enc, fresh.b_enc)
        assert len(layer.loss_curve) == 1

    def test_identity_learnable_case_reduces_loss(self):
        X = np.random.default_rng(1).integers(0, 2, size=(64, 8)).astype(float)
        cfg = PretrainConfig(epochs=500, corruption_level=0.0, learning_rate=0.5,
                             batch_size=16, seed=0)
        layer = pretrain.train_dae_layer(X, 16, cfg)
        initial = scalar_reconstruction_loss(pretrain.init_dae(8, 16, pretrain.layer_rng(0, 0)), X, X)
        final = scalar_reconstruction_loss(layer, X, X)
        assert initial == pytest.approx(layer.loss_curve[0] * len(X), rel=1e-12)
        assert final < 0.2 * initial

    def test_empty_input_rejected(self):
        with pytest.raises(ShapeError):
            pretrain.train_dae_layer(np.zeros((0, 3)), 2, PretrainConfig())


class TestStack:
    def cfg(self, sizes, **kw):
        return PretrainConfig(hidden_sizes=sizes, epochs=2, batch_size=16, **kw)

    def test_single_layer_stack_is_train_dae_layer(self):
        X = np.random.default_rng(2).random((40, 6))
        cfg = self.cfg((4,), seed=3)
        (stacked,) = pretrain.stack_pretrain(X, cfg)
        alone = pretrain.train_dae_layer(X, 4, cfg, pretrain.layer_rng(3, 0))
        np.testing.assert_array_equal(stacked.W, alone.W)
        np.testing.assert_array_equal(stacked.b_dec, alone.b_dec)

    def test_second_layer_trains_on_clean_encoding(self):
        X = np.random.default_rng(4).random((40, 6))
        cfg = self.cfg((5, 3), seed=9)
        first, second = pretrain.stack_pretrain(X, cfg)
        W = first.W
        H = np.array([[1.0 / (1.0 + math.exp(-(first.b_enc[j] + sum(x[i] * W[i, j] for i in range(6)))))
                       for j in range(5)] for x in X])
        expected = pretrain.train_dae_layer(H, 3, cfg, pretrain.layer_rng(9, 1))
        np.testing.assert_allclose(second.W, expected.W, rtol=1e-10, atol=1e-12)

    def test_later_layers_leave_earlier_ones_alone(self):
        X = np.random.default_rng(5).random((30, 6))
        cfg = self.cfg((4, 3), seed=1)
        first_only = pretrain.stack_pretrain(X, self.cfg((4,), seed=1))[0]
        first, _ = pretrain.stack_pretrain(X, cfg)
        np.testing.assert_array_equal(first.W, first_only.W)

    def test_empty_unlabeled_rejected(self):
        with pytest.raises(ShapeError):
            pretrain.stack_pretrain(np.zeros((0, 4)), self.cfg((2,)))


class TestInitNetwork:
    def specs(self, d_in):
        return [LayerSpec("maxout", d_in, 4), LayerSpec("softmax", 4, 3)]

    def test_no_daes_equals_plain_initialisation(self):
        a = pretrain.init_network([], self.specs(5), np.random.default_rng(0))
        b = Network.from_specs(self.specs(5), np.random.default_rng(0))
        for pa, pb in zip(a.params(), b.params()):
            np.testing.assert_array_equal(pa, pb)

    def test_first_layer_equals_encoder(self):
        X = np.random.default_rng(6).random((30, 6))
        daes = pretrain.stack_pretrain(X, PretrainConfig(hidden_sizes=(5, 4), epochs=1))
        net = pretrain.init_network(daes, self.specs(4), np.random.default_rng(1))
        reps = nn.forward(net, X)
        assert reps[0].tobytes() == pretrain.encode(daes[0], X).tobytes()
        assert reps[1].tobytes() == pretrain.encode(daes[1], pretrain.encode(daes[0], X)).tobytes()
        assert net.layer_names[:2] == ["h0", "h1"]
        assert [l.kind for l in net.layers[:2]] == ["affine_sigmoid"] * 2

    def test_dimension_break_names_both_sizes(self):
        X = np.random.default_rng(7).random((10, 6))
        daes = pretrain.stack_pretrain(X, PretrainConfig(hidden_sizes=(10,), epochs=0))
        with pytest.raises(ShapeError, match="10 features.*expects 12"):
            pretrain.init_network(daes, self.specs(12), np.random.default_rng(0))


class TestScaler:
    def test_range_and_clipping(self):
        X = np.array([[0.0, 5.0], [10.0, 5.0]])
        sc = pretrain.MinMaxScaler().fit(X)
        out = sc.transform(np.array([[5.0, 5.0], [20.0, 1.0]]))
        np.testing.assert_array_equal(out, [[0.5, 0.0], [1.0, 0.0]])
