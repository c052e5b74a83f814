import numpy as np
import pytest

from hencall.model import (
    CheckpointError,
    DimMismatch,
    EmptyChannel,
    ModelConfig,
    ModelError,
    boom,
    encode_channel,
    forward,
    forward_batch,
    gelu,
    gelu_grad,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sha_attention,
)

TINY = ModelConfig(channel_input_dims=(3, 2, 4), hidden_size=8, boom_dim=16, dropout=0.0, seed=0)


def tiny_channels(seed=0, lengths=(3, 2, 4)):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(t, d)) for t, d in zip(lengths, TINY.channel_input_dims)]


class TestConfig:
    def test_dropout_one_rejected(self):
        with pytest.raises(ModelError):
            ModelConfig(dropout=1.0)

    def test_wrong_class_count_rejected(self):
        with pytest.raises(ModelError):
            ModelConfig(num_classes=4)

    def test_text_round_trip(self):
        cfg = ModelConfig(channel_input_dims=(5, 5, 80), hidden_size=48, boom_dim=96, dropout=0.1, seed=3)
        assert ModelConfig.from_text(cfg.to_text()) == cfg


class TestInitParams:
    def test_deterministic(self):
        a = init_params(TINY)
        b = init_params(TINY)
        assert a.keys() == b.keys()
        for k in a:
            assert np.array_equal(a[k], b[k])

    def test_boom_shapes_from_published_dims(self):
        cfg = ModelConfig(channel_input_dims=(5, 5, 80), hidden_size=1024, boom_dim=512)
        params = init_params(cfg)
        assert params["boom.w_up"].shape == (3 * 1024, 512)
        assert params["boom.w_down"].shape == (512, 8)

    def test_forget_gate_bias_one(self):
        params = init_params(TINY)
        b = params["ch0.l0.b"]
        h = TINY.hidden_size
        assert np.all(b[h : 2 * h] == 1.0)
        assert np.all(b[:h] == 0.0)

    def test_seed_changes_weights(self):
        a = init_params(TINY)
        b = init_params(ModelConfig(channel_input_dims=(3, 2, 4), hidden_size=8, boom_dim=16, dropout=0.0, seed=1))
        assert not np.array_equal(a["ch0.w_in"], b["ch0.w_in"])


class TestEncodeChannel:
    def test_zero_input_zero_weights(self):
        params = init_params(TINY)
        for k in params:
            if k.endswith(("w_in", "w_x", "w_h", "w_q")):
                params[k] = np.zeros_like(params[k])
        # with all weights zero the cell candidate is tanh(0) = 0, so the
        # state stays zero regardless of gate biases
        out = encode_channel(TINY, params, np.zeros((1, 3)), channel=0)
        assert np.allclose(out, 0.0)

    def test_row_count(self):
        params = init_params(TINY)
        out = encode_channel(TINY, params, np.random.default_rng(0).normal(size=(3, 3)), channel=0)
        assert out.shape == (3, TINY.hidden_size)

    def test_eval_mode_deterministic(self):
        params = init_params(TINY)
        x = np.random.default_rng(1).normal(size=(4, 3))
        a = encode_channel(TINY, params, x, channel=0, mode="eval")
        b = encode_channel(TINY, params, x, channel=0, mode="eval")
        assert np.array_equal(a, b)

    def test_dim_mismatch(self):
        params = init_params(TINY)
        with pytest.raises(DimMismatch):
            encode_channel(TINY, params, np.zeros((3, 7)), channel=0)


class TestAttention:
    def test_single_step_identity(self):
        rng = np.random.default_rng(0)
        h = rng.normal(size=(1, 8))
        wq = rng.normal(size=(8, 8))
        context, weights = sha_attention(h, wq)
        assert weights.tolist() == [1.0]
        assert np.allclose(context, h[0])

    def test_identical_states_uniform(self):
        rng = np.random.default_rng(1)
        row = rng.normal(size=8)
        h = np.tile(row, (5, 1))
        context, weights = sha_attention(h, rng.normal(size=(8, 8)))
        assert np.allclose(weights, 0.2)
        assert np.allclose(context, row)

    def test_weights_are_distribution(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            h = rng.normal(size=(7, 8))
            _, weights = sha_attention(h, rng.normal(size=(8, 8)))
            assert abs(weights.sum() - 1.0) < 1e-6
            assert np.all(weights >= 0)

    def test_weights_permute_with_inputs_when_recurrence_off(self):
        # zero recurrent weights and a shut forget gate make hidden states
        # per-step functions of the inputs; permuting the non-final steps
        # then permutes the attention weights the same way
        cfg = TINY
        params = init_params(cfg)
        params["ch0.l0.w_h"] = np.zeros_like(params["ch0.l0.w_h"])
        params["ch0.l0.b"][cfg.hidden_size : 2 * cfg.hidden_size] = -30.0
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 3))
        h = encode_channel(cfg, params, x, channel=0)
        _, w = sha_attention(h, params["ch0.w_q"])
        perm = np.array([2, 0, 1, 3, 4])  # keeps the last (query) step fixed
        h2 = encode_channel(cfg, params, x[perm], channel=0)
        _, w2 = sha_attention(h2, params["ch0.w_q"])
        assert np.allclose(w2, w[perm], atol=1e-9)


class TestBoom:
    def test_zero_vector_zero_biases(self):
        params = init_params(TINY)
        out = boom(params, np.zeros(3 * TINY.hidden_size))
        assert np.allclose(out, 0.0)  # gelu(0) = 0 and biases start at zero

    def test_output_length_8(self):
        params = init_params(TINY)
        v = np.random.default_rng(0).normal(size=3 * TINY.hidden_size)
        assert boom(params, v).shape == (8,)

    def test_down_projection_linearity(self):
        params = init_params(TINY)
        v = np.random.default_rng(1).normal(size=3 * TINY.hidden_size)
        a = boom(params, v)
        params["boom.w_down"] = 2.0 * params["boom.w_down"]
        params["boom.b_down"] = 2.0 * params["boom.b_down"]
        assert np.allclose(boom(params, v), 2.0 * a)

    def test_gelu_derivative_matches_fd(self):
        x = np.linspace(-4, 4, 101)
        h = 1e-6
        fd = (gelu(x + h) - gelu(x - h)) / (2 * h)
        assert np.allclose(gelu_grad(x), fd, atol=1e-8)


class TestForward:
    def test_shapes_and_finiteness(self):
        params = init_params(TINY)
        trace = forward(TINY, params, tiny_channels())
        assert trace.logits.shape == (8,)
        assert np.all(np.isfinite(trace.logits))
        assert len(trace.attention_weights) == 3
        for w in trace.attention_weights:
            assert abs(w.sum() - 1.0) < 1e-6

    def test_eval_deterministic(self):
        params = init_params(TINY)
        chans = tiny_channels()
        a = forward(TINY, params, chans).logits
        b = forward(TINY, params, chans).logits
        assert np.array_equal(a, b)

    def test_empty_channel_rejected(self):
        params = init_params(TINY)
        chans = tiny_channels()
        chans[1] = np.zeros((0, 2))
        with pytest.raises(EmptyChannel):
            forward(TINY, params, chans)

    def test_train_mode_needs_rng_with_dropout(self):
        cfg = ModelConfig(channel_input_dims=(3, 2, 4), hidden_size=8, boom_dim=16, dropout=0.5, seed=0)
        params = init_params(cfg)
        with pytest.raises(ModelError):
            forward(cfg, params, tiny_channels(), mode="train")

    def test_batched_matches_single(self):
        params = init_params(TINY)
        sample_a = tiny_channels(seed=1, lengths=(3, 2, 5))
        sample_b = tiny_channels(seed=2, lengths=(5, 4, 2))
        logits, _ = forward_batch(TINY, params, [sample_a, sample_b])
        la = forward(TINY, params, sample_a).logits
        lb = forward(TINY, params, sample_b).logits
        assert np.allclose(logits[0], la, atol=1e-12)
        assert np.allclose(logits[1], lb, atol=1e-12)

    def test_dropout_train_average_approaches_eval(self):
        cfg = ModelConfig(channel_input_dims=(3, 2, 4), hidden_size=8, boom_dim=16, dropout=0.3, seed=0)
        params = init_params(cfg)
        chans = tiny_channels(seed=5)
        eval_logits = forward(cfg, params, chans).logits
        rng = np.random.default_rng(123)
        n = 3000
        acc = np.zeros(8)
        for _ in range(n):
            acc += forward(cfg, params, chans, mode="train", rng=rng).logits
        mean = acc / n
        # inverted dropout: the expectation over masks approximates the
        # eval-mode activations; loose interval since the net is nonlinear
        assert np.allclose(mean, eval_logits, atol=0.25)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_params(TINY)
        path = tmp_path / "m.hvck"
        save_checkpoint(path, "sharnn", TINY.to_text(), params)
        kind, text, back = load_checkpoint(path)
        assert kind == "sharnn"
        assert ModelConfig.from_text(text) == TINY
        assert back.keys() == params.keys()
        for k in params:
            assert np.array_equal(back[k], params[k])

    def test_forward_after_reload_bit_identical(self, tmp_path):
        params = init_params(TINY)
        chans = tiny_channels(seed=9)
        before = forward(TINY, params, chans).logits
        path = tmp_path / "m.hvck"
        save_checkpoint(path, "sharnn", TINY.to_text(), params)
        _, _, back = load_checkpoint(path)
        after = forward(TINY, back, chans).logits
        assert np.array_equal(before, after)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hvck"
        path.write_bytes(b"NOPEx\x01")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_model_kind_tag(self, tmp_path):
        path = tmp_path / "g.hvck"
        save_checkpoint(path, "gmm", "n_components=4\n", {"class0.means": np.eye(3)})
        kind, text, arrays = load_checkpoint(path)
        assert kind == "gmm"
        assert "n_components=4" in text
        assert arrays["class0.means"].shape == (3, 3)
