#!/usr/bin/env python3
"""
Conformer block tests.
"""

import sys
sys.path.insert(0, 'src')

import numpy as np
import pytest

from ringformer.attention import AttentionConfig, ScoreBufferTracker
from ringformer.conformer import (ConformerConfig, conformer_block, conformer_stack, conv_module, feed_forward_module,
                                  init_conformer, mhsa_module, param_specs, zero_conformer_weights)
from ringformer.errors import ConfigError, DimensionError
from ringformer.numeric import layer_norm


def _small(**kw):
    params = dict(dim=32, num_heads=4, num_layers=2, depthwise_kernel=7, block_len=16)
    params.update(kw)
    return ConformerConfig(**params)


def test_layer_parameter_count():
    """One layer holds 9d² + 54d scalars with the default half-width feed-forward."""
    print("Testing parameter count...")
    for d, k in [(512, 31), (32, 7)]:
        cfg = ConformerConfig(dim=d, num_heads=8 if d == 512 else 4, num_layers=1, depthwise_kernel=k)
        count = sum(int(np.prod(s.shape)) for s in param_specs(cfg))
        assert count == 9 * d * d + (23 + k) * d, (d, count)
    assert 9 * 512 ** 2 + 54 * 512 == sum(int(np.prod(s.shape)) for s in param_specs(ConformerConfig(num_layers=1)))
    print("✓ parameter count\n")


def test_zero_weights_reduce_to_layer_norm():
    """With zero projections every sub-module adds nothing; the final norm remains."""
    print("Testing zero-weight identity...")
    cfg = _small(num_layers=1)
    w = zero_conformer_weights(cfg, dtype=np.float64)
    x = np.random.default_rng(0).standard_normal((20, 32))
    attn_cfg = cfg.attention_config(20)
    out = conformer_block(x, w.layers[0], attn_cfg)
    assert np.allclose(out, layer_norm(x), atol=1e-12)
    print("✓ zero weights\n")


def test_shape_preserved_for_all_lengths():
    """T×d in, T×d out, including T = 1 and T below the block length."""
    print("Testing shapes...")
    cfg = _small()
    w = init_conformer(cfg, seed=1)
    for t in (1, 5, 16, 33):
        x = np.random.default_rng(t).standard_normal((t, 32)).astype(np.float32)
        out = conformer_stack(x, w)
        assert out.shape == (t, 32) and out.dtype == np.float32
        assert np.all(np.isfinite(out))
    print("✓ shapes\n")


def test_ring_size_does_not_change_output():
    """Conformer output agrees across ring sizes."""
    print("Testing ring-size invariance...")
    cfg = _small()
    w64 = init_conformer(cfg, seed=2, dtype=np.float64)
    x = np.random.default_rng(3).standard_normal((48, 32))
    reference = conformer_stack(x, w64, num_devices=1)
    for devices in (2, 3, 4):
        assert np.max(np.abs(conformer_stack(x, w64, num_devices=devices) - reference)) < 1e-10
    w32 = init_conformer(cfg, seed=2, dtype=np.float32)
    x32 = x.astype(np.float32)
    assert np.max(np.abs(conformer_stack(x32, w32, num_devices=4) - conformer_stack(x32, w32, num_devices=1))) < 1e-4
    print("✓ ring-size invariance\n")


def test_modules_match_manual_formulas():
    """Feed-forward and conv modules match hand-written numpy."""
    print("Testing sub-modules...")
    cfg = _small(num_layers=1)
    layer = init_conformer(cfg, seed=4, dtype=np.float64).layers[0]
    x = np.random.default_rng(5).standard_normal((10, 32))

    ffn = layer["ffn1"]
    h = layer_norm(x, ffn["norm_gain"], ffn["norm_bias"]) @ ffn["w1"] + ffn["b1"]
    h = h / (1.0 + np.exp(-h)) * 1.0
    h = h @ ffn["w2"] + ffn["b2"]
    assert np.allclose(feed_forward_module(x, ffn), h, atol=1e-12)

    conv = layer["conv"]
    h = layer_norm(x, conv["norm_gain"], conv["norm_bias"])
    h = h @ conv["pw1"][:, :, 0].T + conv["pw1_bias"]
    h = h[:, :32] / (1.0 + np.exp(-h[:, 32:]))
    padded = np.pad(h, ((3, 3), (0, 0)))
    dw = np.stack([sum(padded[t + j] * conv["dw"][:, 0, j] for j in range(7)) for t in range(10)]) + conv["dw_bias"]
    dw = layer_norm(dw, conv["mid_norm_gain"], conv["mid_norm_bias"])
    dw = dw / (1.0 + np.exp(-dw))
    expected = dw @ conv["pw2"][:, :, 0].T + conv["pw2_bias"]
    assert np.allclose(conv_module(x, conv), expected, atol=1e-10)
    print("✓ sub-modules\n")


def test_mhsa_probe_and_tracker():
    """Probe collects per-head Q/K; tracker sees ring buffers."""
    print("Testing attention probe...")
    cfg = _small(num_layers=1)
    layer = init_conformer(cfg, seed=6).layers[0]
    x = np.random.default_rng(7).standard_normal((40, 32)).astype(np.float32)
    attn_cfg = cfg.attention_config(40)
    probe, tracker = [], ScoreBufferTracker()
    out = mhsa_module(x, layer["attn"], attn_cfg, tracker=tracker, probe=probe)
    assert out.shape == (40, 32)
    assert len(probe) == 4 and probe[0][0].shape == (40, 8)
    assert tracker.peak == attn_cfg.num_devices * 16 * 16
    with pytest.raises(DimensionError):
        mhsa_module(x, layer["attn"], AttentionConfig(seq_len=40, num_heads=2, head_dim=8))
    print("✓ probe and tracker\n")


def test_dropout_hook():
    """Dropout only runs with a generator; inference stays deterministic."""
    print("Testing dropout hook...")
    cfg = _small(num_layers=1)
    w = init_conformer(cfg, seed=8, dtype=np.float64)
    x = np.random.default_rng(9).standard_normal((12, 32))
    attn_cfg = cfg.attention_config(12)
    plain = conformer_block(x, w.layers[0], attn_cfg)
    assert np.array_equal(plain, conformer_block(x, w.layers[0], attn_cfg))
    dropped = conformer_block(x, w.layers[0], attn_cfg, dropout=0.5, dropout_rng=np.random.default_rng(0))
    assert not np.allclose(plain, dropped)
    print("✓ dropout hook\n")


def test_config_errors():
    print("Testing config errors...")
    with pytest.raises(ConfigError):
        ConformerConfig(dim=30, num_heads=4)
    with pytest.raises(ConfigError):
        ConformerConfig(depthwise_kernel=30)
    with pytest.raises(ConfigError):
        ConformerConfig(dropout=1.0)
    with pytest.raises(DimensionError):
        feed_forward_module(np.ones((4, 16)), init_conformer(_small(num_layers=1)).layers[0]["ffn1"])
    print("✓ config errors\n")


def main():
    """Run all tests."""
    print("=" * 60)
    print("Conformer Tests")
    print("=" * 60 + "\n")

    try:
        test_layer_parameter_count()
        test_zero_weights_reduce_to_layer_norm()
        test_shape_preserved_for_all_lengths()
        test_ring_size_does_not_change_output()
        test_modules_match_manual_formulas()
        test_mhsa_probe_and_tracker()
        test_dropout_hook()
        test_config_errors()

        print("=" * 60)
        print("ALL TESTS PASSED ✓")
        print("=" * 60)
        return 0
    except Exception as e:
        print("\n" + "=" * 60)
        print("TEST FAILED ✗")
        print("=" * 60)
        print(f"Error: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
