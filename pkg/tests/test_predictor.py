import numpy as np
import pytest

from lptm.errors import ContractError, FormatError, TruncatedFileError
from lptm.predictor import (ALPHA_FLOOR, SOFTPLUS_ONE, ConvNet, checkpoint_io, conv2d,
                            conv_backward, describe, init_convnet, init_state, list_tensors,
                            net_forward, predict_params, predict_weights, read_checkpoint,
                            write_checkpoint)

from conftest import random_image


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def _fd_params(net, x, w, eps=1e-6):
    def loss():
        return np.sum(net_forward(net, x)[0] * w)

    out = []
    for arrs in (net.kernels, net.biases):
        grads = []
        for p in arrs:
            g = np.zeros_like(p)
            for c in range(p.size):
                old = p.flat[c]
                p.flat[c] = old + eps
                fp = loss()
                p.flat[c] = old - eps
                fm = loss()
                p.flat[c] = old
                g.flat[c] = (fp - fm) / (2 * eps)
            grads.append(g)
        out.append(grads)
    return out


class TestConv:
    def test_matches_scipy_correlate(self, rng):
        from scipy.signal import correlate2d
        x = rng.normal(size=(7, 9, 2))
        k = rng.normal(size=(3, 3, 2, 1))
        for d in (1, 2):
            kd = np.zeros((2 * d + 1, 2 * d + 1, 2))
            kd[::d, ::d] = k[:, :, :, 0]
            expected = sum(correlate2d(x[:, :, c], kd[:, :, c], mode="same") for c in range(2))
            np.testing.assert_allclose(conv2d(x, k, np.zeros(1), d)[:, :, 0], expected,
                                       atol=1e-12)

    def test_size_preserved_for_tall_input(self, rng):
        # more rows than one processing block
        x = rng.normal(size=(150, 5, 3))
        k = rng.normal(size=(3, 3, 3, 4))
        assert conv2d(x, k, np.zeros(4), 4).shape == (150, 5, 4)

    def test_zero_grad(self, rng):
        net = init_convnet(rng, (4, 5, 3), (1, 2), 0.0, np.float64)
        (gks, gbs), gx = conv_backward(net, rng.normal(size=(6, 6, 4)), np.zeros((6, 6, 3)))
        assert not any(g.any() for g in gks + gbs) and not gx.any()

    def test_scalar_chain_rule(self):
        # 1x1 image, two layers, only the centre taps matter
        k1 = np.zeros((3, 3, 1, 1))
        k1[1, 1] = 2.0
        k2 = np.zeros((3, 3, 1, 1))
        k2[1, 1] = 3.0
        net = ConvNet([k1, k2], [np.array([-1.0]), np.array([0.5])], [1, 1])
        x = np.array([[[0.2]]])  # z1 = 2*0.2 - 1 = -0.6 < 0, leaky slope 0.1
        out, _ = net_forward(net, x)
        np.testing.assert_allclose(out, 3 * 0.1 * -0.6 + 0.5)
        (gks, gbs), gx = conv_backward(net, x, np.ones((1, 1, 1)))
        np.testing.assert_allclose(gks[1][1, 1, 0, 0], 0.1 * -0.6)
        np.testing.assert_allclose(gbs[1], [1.0])
        np.testing.assert_allclose(gks[0][1, 1, 0, 0], 3 * 0.1 * 0.2)
        np.testing.assert_allclose(gbs[0], [3 * 0.1])
        np.testing.assert_allclose(gx, [[[3 * 0.1 * 2]]])
        assert gks[0][0, 0, 0, 0] == 0.0

    def test_finite_differences(self, rng):
        net = init_convnet(rng, (4, 5, 3), (1, 2), 0.0, np.float64)
        net.kernels[-1] *= 1000.0
        x = rng.normal(size=(8, 8, 4))
        w = rng.normal(size=(8, 8, 3))
        (gks, gbs), gx = conv_backward(net, x, w)
        nks, nbs = _fd_params(net, x, w)
        for a, n in zip(gks + gbs, nks + nbs):
            assert _rel(a, n) <= 1e-3
        idx = rng.choice(x.size, 30, replace=False)
        num = []
        for c in idx:
            old = x.flat[c]
            x.flat[c] = old + 1e-6
            fp = np.sum(net_forward(net, x)[0] * w)
            x.flat[c] = old - 1e-6
            fm = np.sum(net_forward(net, x)[0] * w)
            x.flat[c] = old
            num.append((fp - fm) / 2e-6)
        assert _rel(gx.flat[idx], np.array(num)) <= 1e-3

    def test_channel_mismatch(self, rng):
        net = init_convnet(rng, (3, 4), (1,), 0.0)
        with pytest.raises(ContractError):
            net_forward(net, np.zeros((4, 4, 2)))


class TestWeightPredictor:
    def test_bias_only_one_hot(self, rng):
        state = init_state(n_bins=3)
        state.weight_net.kernels[-1][...] = 0.0
        w = predict_weights(state.weight_net, random_image(rng, 9, 11))
        np.testing.assert_array_equal(w, np.broadcast_to([1.0, 0.0, 0.0], (9, 11, 3)))

    @pytest.mark.parametrize("h, w", [(5, 5), (12, 7)])
    def test_output_shape(self, rng, h, w):
        state = init_state(n_luts=4, n_bins=3)
        assert predict_weights(state.weight_net, random_image(rng, h, w)).shape == (h, w, 4)

    def test_architecture(self):
        net = init_state(n_bins=3).weight_net
        assert [k.shape[3] for k in net.kernels] == [16, 32, 32, 16, 3]
        assert net.dilations == [1, 2, 4, 2, 1]

    def test_rejects_gray(self, rng):
        with pytest.raises(ContractError):
            predict_weights(init_state(n_bins=3).weight_net, random_image(rng, 4, 4, 1))


class TestPPB:
    def test_init_near_identity(self, rng):
        ppb = init_state(n_bins=3).ppbs[0]
        ppb.kernels[-1][...] = 0.0
        p = predict_params(ppb, rng.normal(size=(6, 6, 7)))
        np.testing.assert_allclose(p.alpha, 1.0 + ALPHA_FLOOR, atol=1e-6)
        np.testing.assert_allclose(p.beta, 1.0, atol=1e-6)
        assert abs(SOFTPLUS_ONE - 0.5413) < 1e-4

    def test_shapes_and_positivity(self, rng):
        state = init_state(n_bins=3)
        ppb = state.ppbs[1]
        ppb.kernels[-1][...] = rng.normal(0, 50, ppb.kernels[-1].shape)
        p = predict_params(ppb, rng.normal(0, 5, (10, 13, 6)))
        assert p.alpha.shape == p.beta.shape == (10, 13)
        assert p.alpha.min() > 0 and p.beta.min() >= 0

    def test_channel_counts(self, rng):
        state = init_state(n_bins=3)
        assert state.ppbs[0].in_channels == 7 and state.ppbs[1].in_channels == 6
        with pytest.raises(ContractError):
            predict_params(state.ppbs[0], np.zeros((4, 4, 5)))
        with pytest.raises(ContractError):
            predict_params(state.ppbs[0], np.zeros((4, 4, 6)))


class TestModelState:
    def test_parameter_budget(self):
        assert init_state().n_params() <= 800_000

    def test_describe_lists_all(self):
        state = init_state(n_levels=2, n_bins=5)
        text = describe(state)
        for name in state.named_parameters():
            assert name in text
        assert str(state.n_params()) in text.splitlines()[-1]

    def test_copy_is_independent(self):
        state = init_state(n_bins=3)
        twin = state.copy()
        twin.luts[0] += 1
        assert not np.array_equal(twin.luts[0], state.luts[0])


class TestCheckpoint:
    def _random_state(self, rng):
        state = init_state(n_levels=2, n_bins=5, seed=7)
        for name, p in state.named_parameters().items():
            p[...] = rng.normal(size=p.shape)
            state.adam_m[name] = rng.normal(size=p.shape).astype(np.float32)
            state.adam_v[name] = rng.uniform(size=p.shape).astype(np.float32)
        state.step = 123
        return state

    def test_round_trip_bit_exact(self, tmp_path, rng):
        state = self._random_state(rng)
        p = tmp_path / "m.lptm"
        checkpoint_io(state, p, "write")
        back = checkpoint_io(None, p, "read")
        assert back.step == 123
        for (n1, a), (n2, b) in zip(state.named_parameters().items(),
                                    back.named_parameters().items()):
            assert n1 == n2 and a.tobytes() == b.tobytes()
            assert state.adam_m[n1].tobytes() == back.adam_m[n1].tobytes()
            assert state.adam_v[n1].tobytes() == back.adam_v[n1].tobytes()
        assert back.weight_net.dilations == state.weight_net.dilations
        write_checkpoint(back, tmp_path / "again.lptm")
        assert (tmp_path / "again.lptm").read_bytes() == p.read_bytes()

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.lptm"
        p.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(FormatError):
            read_checkpoint(p)

    def test_wrong_version(self, tmp_path):
        p = tmp_path / "v.lptm"
        write_checkpoint(init_state(n_levels=1, n_bins=3), p)
        data = bytearray(p.read_bytes())
        data[4] = 9
        p.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            read_checkpoint(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.lptm"
        write_checkpoint(init_state(n_levels=1, n_bins=3), p)
        p.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(TruncatedFileError):
            read_checkpoint(p)
        with pytest.raises(TruncatedFileError):
            list_tensors(p)

    def test_header_walk(self, tmp_path):
        state = init_state(n_levels=2, n_bins=5)
        p = tmp_path / "h.lptm"
        write_checkpoint(state, p)
        listed = dict(list_tensors(p))
        for name, arr in state.named_parameters().items():
            assert listed[name] == arr.shape
        assert "meta.step" in listed
