"""Encoder contracts: shapes, norms, attention, gradients."""

import numpy as np
import pytest
import torch

from cogfatigue.encoder import (
    EncoderConfig,
    attention_weights,
    encode,
    init_encoder,
    parameter_count,
    pooled_features,
)
from cogfatigue.errors import ShapeError, ValidationError

TINY = EncoderConfig(
    conv_channels=(4, 4, 4),
    lstm_hidden=8,
    embed_dim=4,
    input_depth=2,
    input_hw=(8, 8),
)

SMALL = EncoderConfig(
    conv_channels=(8, 8, 16),
    lstm_hidden=16,
    embed_dim=8,
    input_depth=4,
    input_hw=(16, 16),
)


def expected_param_count(cfg: EncoderConfig) -> int:
    """Closed-form sum over the named tensor shapes."""
    c1, c2, c3 = cfg.conv_channels
    k, z, h, d = cfg.kernel, cfg.input_depth, cfg.lstm_hidden, cfg.embed_dim
    conv = (c1 * z * k * k + c1) + (c2 * c1 * k * k + c2) + (c3 * c2 * k * k + c3)
    bn = 2 * (c1 + c2 + c3)
    lstm, in_size = 0, c3
    for _ in range(cfg.lstm_layers):
        lstm += 4 * h * in_size + 4 * h * h + 8 * h
        in_size = h
    return conv + bn + lstm + h + (d * h + d)


def small_batch(rng, cfg=SMALL, b=2, n=5):
    return rng.standard_normal((b, n, cfg.input_depth, *cfg.input_hw)).astype(np.float32)


class TestInit:
    def test_same_seed_identical(self):
        a = init_encoder(SMALL, seed=7)
        b = init_encoder(SMALL, seed=7)
        for (name, pa), (_, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert torch.equal(pa, pb), name

    def test_different_seed_differs(self):
        a = init_encoder(SMALL, seed=7)
        b = init_encoder(SMALL, seed=8)
        assert not torch.equal(a.conv1.weight, b.conv1.weight)

    def test_default_conv1_shape(self):
        enc = init_encoder(EncoderConfig(), seed=0)
        assert tuple(enc.conv1.weight.shape) == (64, 32, 3, 3)

    def test_batchnorm_starts_neutral(self):
        enc = init_encoder(SMALL, seed=0)
        assert torch.equal(enc.bn2.weight, torch.ones(8))
        assert torch.equal(enc.bn2.bias, torch.zeros(8))
        assert torch.equal(enc.bn2.running_var, torch.ones(8))

    @pytest.mark.parametrize("cfg", [TINY, SMALL, EncoderConfig()])
    def test_parameter_count_closed_form(self, cfg):
        assert parameter_count(init_encoder(cfg, seed=0)) == expected_param_count(cfg)

    def test_default_total(self):
        # anchors the closed form itself against an independently tallied value
        assert expected_param_count(EncoderConfig()) == 947_904

    def test_invalid_config(self):
        with pytest.raises(ValidationError):
            EncoderConfig(embed_dim=1)
        with pytest.raises(ValidationError):
            EncoderConfig(dropout=1.0)


class TestEncode:
    def test_shape_and_unit_norm(self, rng):
        enc = init_encoder(SMALL, seed=1).eval()
        out = encode(enc, small_batch(rng))
        assert out.shape == (2, SMALL.embed_dim)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)

    def test_eval_deterministic(self, rng):
        enc = init_encoder(SMALL, seed=1).eval()
        x = small_batch(rng)
        np.testing.assert_array_equal(encode(enc, x), encode(enc, x))

    def test_zero_input_finite(self):
        enc = init_encoder(SMALL, seed=1).eval()
        x = np.zeros((1, 3, SMALL.input_depth, *SMALL.input_hw), dtype=np.float32)
        out = encode(enc, x)
        assert np.isfinite(out).all()
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)

    def test_shape_mismatch_rejected(self, rng):
        enc = init_encoder(SMALL, seed=1).eval()
        with pytest.raises(ShapeError):
            encode(enc, rng.standard_normal((1, 3, 2, 16, 16)).astype(np.float32))
        with pytest.raises(ShapeError):
            encode(enc, rng.standard_normal((3, 2, 16, 16)).astype(np.float32))

    def test_batch_independence_in_eval(self, rng):
        enc = init_encoder(SMALL, seed=2).eval()
        x = small_batch(rng, b=4)
        full = encode(enc, x)
        for i in range(4):
            row = encode(enc, x[i : i + 1])
            np.testing.assert_allclose(full[i], row[0], atol=1e-5)

    def test_temporal_order_sensitivity(self, rng):
        enc = init_encoder(SMALL, seed=3).eval()
        x = small_batch(rng, b=1, n=6)
        flipped = x[:, ::-1].copy()
        a = encode(enc, x)
        b = encode(enc, flipped)
        assert np.abs(a - b).max() > 1e-4


class TestPooledFeatures:
    def test_width(self, rng):
        enc = init_encoder(SMALL, seed=1).eval()
        assert pooled_features(enc, small_batch(rng)).shape == (2, SMALL.lstm_hidden)

    def test_projection_consistency(self, rng):
        enc = init_encoder(SMALL, seed=1).eval()
        x = small_batch(rng)
        pooled = torch.from_numpy(pooled_features(enc, x))
        with torch.no_grad():
            manual = torch.nn.functional.normalize(enc.proj(pooled), dim=1).numpy()
        np.testing.assert_allclose(manual, encode(enc, x), atol=1e-5)

    def test_not_normalized(self, rng):
        enc = init_encoder(SMALL, seed=1).eval()
        norms = np.linalg.norm(pooled_features(enc, small_batch(rng)), axis=1)
        assert np.abs(norms - 1.0).max() > 1e-3

    def test_single_timepoint_equals_hidden_state(self, rng):
        enc = init_encoder(SMALL, seed=1).eval()
        x = small_batch(rng, b=1, n=1)
        pooled = pooled_features(enc, x)
        with torch.no_grad():
            hidden, alpha, _ = enc.sequence_parts(torch.from_numpy(x))
        np.testing.assert_allclose(pooled, hidden[:, 0].numpy(), atol=1e-6)
        np.testing.assert_allclose(alpha.numpy(), [[1.0]], atol=0)


class TestAttention:
    def test_rows_sum_to_one(self, rng):
        enc = init_encoder(SMALL, seed=4).eval()
        alpha = attention_weights(enc, small_batch(rng, b=3, n=7))
        assert alpha.shape == (3, 7)
        np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-6)
        assert (alpha > 0).all() and (alpha < 1).all()

    def test_single_timepoint_weight_is_one(self, rng):
        enc = init_encoder(SMALL, seed=4).eval()
        alpha = attention_weights(enc, small_batch(rng, b=2, n=1))
        np.testing.assert_array_equal(alpha, np.ones((2, 1), dtype=np.float32))

    def test_identical_hidden_states_give_uniform_weights(self, rng):
        # zeroed LSTM parameters force h_t = 0 for every t
        enc = init_encoder(SMALL, seed=4).eval()
        with torch.no_grad():
            for p in enc.lstm.parameters():
                p.zero_()
        alpha = attention_weights(enc, small_batch(rng, b=2, n=6))
        np.testing.assert_allclose(alpha, np.full((2, 6), 1 / 6), atol=1e-5)


class TestGradients:
    def test_parameter_gradients_match_finite_differences(self, rng):
        torch.manual_seed(0)
        enc = init_encoder(TINY, seed=5).double().eval()
        x = torch.from_numpy(
            rng.standard_normal((2, 3, TINY.input_depth, *TINY.input_hw))
        ).double()
        weights = torch.from_numpy(rng.standard_normal((2, TINY.embed_dim))).double()

        def loss_fn():
            return (enc(x) * weights).sum()

        loss = loss_fn()
        enc.zero_grad()
        loss.backward()

        eps = 1e-6
        worst = 0.0
        for name, p in enc.named_parameters():
            grad = p.grad.reshape(-1)
            flat = p.data.reshape(-1)
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = loss_fn().item()
                flat[idx] = orig - eps
                down = loss_fn().item()
                flat[idx] = orig
                fd = (up - down) / (2 * eps)
                denom = max(abs(fd), abs(grad[idx].item()), 1e-6)
                rel = abs(fd - grad[idx].item()) / denom
                worst = max(worst, rel)
                assert rel < 1e-3, f"{name}[{idx}]: fd={fd}, autograd={grad[idx].item()}"
        assert worst < 1e-3
