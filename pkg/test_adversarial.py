#!/usr/bin/env python3
"""
Adversarial / spectral / feature-matching loss tests and the MPD forward pass.
"""

import sys
sys.path.insert(0, 'src')

import json
import os
import tempfile

import numpy as np
import pytest

from ringformer.adversarial import (DiscriminatorOutput, FamilyScores, LossReport, LossWeights, MPDConfig,
                                    MultiPeriodDiscriminator, adversarial_losses, evaluate_losses,
                                    feature_matching_loss, fold_waveform, magnitude_loss, phase_loss,
                                    spectral_decomposition_loss, total_loss)
from ringformer.dsp import Waveform, stft
from ringformer.errors import ArgumentError, ConfigError, DegenerateInputError, DimensionError


def _signal(n=4096, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 22050
    return Waveform(0.5 * np.sin(2 * np.pi * 330 * t) + 0.05 * rng.standard_normal(n))


def _scores(value, members=3, shape=(4, 2)):
    return [np.full(shape, value) for _ in range(members)]


def _family(theta, psi):
    return FamilyScores(theta=theta, psi=psi)


def test_fold_and_mpd_heights():
    """Folding pads to a period multiple; conv heights follow floor((h + 4 − 5)/s) + 1."""
    print("Testing MPD folding...")
    folded = fold_waveform(np.arange(1.0, 8.0), 2)
    assert folded.shape == (4, 2)
    assert folded[-1].tolist() == [7.0, 0.0]
    with pytest.raises(ArgumentError):
        fold_waveform(np.ones(4), 0)
    with pytest.raises(DimensionError):
        fold_waveform(np.zeros(0), 3)

    cfg = MPDConfig.desk(seed=0)
    assert cfg.strides == [3, 3, 3, 3, 1]
    mpd = MultiPeriodDiscriminator(cfg)
    outputs = mpd(_signal(1000))
    assert len(outputs) == len(cfg.periods)
    for period, out in zip(cfg.periods, outputs):
        h = -(-1000 // period)
        for feature, channels, stride in zip(out.features, cfg.channels, cfg.strides):
            h = (h + 4 - 5) // stride + 1
            assert feature.shape == (channels, h, period), (period, feature.shape)
        assert out.score_map.shape == (1, h, period)
        assert len(out.features) == len(cfg.channels) + 1
    with pytest.raises(ConfigError):
        MPDConfig.preset("ms_sb_cqt")
    print("✓ MPD shapes\n")


def test_adversarial_analytic_cases():
    """Perfect, fooled and undecided discriminators give closed-form losses."""
    print("Testing adversarial losses...")
    real, fake0, fake1, half = _scores(1.0), _scores(0.0), _scores(1.0), _scores(0.5)
    l_g, l_d = adversarial_losses(_family(real, real), _family(fake0, fake0), _family(fake0, fake0))
    assert (l_g, l_d) == (1.0, 0.0)
    l_g, l_d = adversarial_losses(_family(real, real), _family(fake1, fake1), _family(fake1, fake1))
    assert (l_g, l_d) == (0.0, 1.0)
    l_g, l_d = adversarial_losses(_family(half, half), _family(half, half), _family(half, half))
    assert abs(l_g - 0.25) < 1e-12 and abs(l_d - 0.5) < 1e-12
    for alpha in (0.0, 0.3, 1.0):
        l_g, _ = adversarial_losses(_family(real, real), _family(fake0, fake1), _family(fake0, fake1), alpha)
        assert abs(l_g - alpha) < 1e-12
    with pytest.raises(ArgumentError):
        adversarial_losses(_family([], real), _family(fake0, fake0), _family(fake0, fake0))
    with pytest.raises(ArgumentError):
        adversarial_losses(_family(real, real), _family(fake0, fake0), _family(fake0, fake0), alpha=1.5)
    print("✓ adversarial losses\n")


def test_adversarial_affine_in_alpha():
    """Both losses are affine in α: the value at 0.5 is the mean of the endpoint values."""
    print("Testing α-affinity...")
    rng = np.random.default_rng(3)
    for _ in range(10):
        def family():
            return _family([rng.uniform(-1.0, 2.0, size=(int(rng.integers(1, 9)), 3)) for _ in range(5)],
                           [rng.uniform(-1.0, 2.0, size=(int(rng.integers(1, 9)), 1)) for _ in range(3)])
        real, fake_d, fake_g = family(), family(), family()
        at = {a: adversarial_losses(real, fake_d, fake_g, a) for a in (0.0, 0.25, 0.5, 1.0)}
        for i in (0, 1):
            assert abs(at[0.5][i] - 0.5 * (at[0.0][i] + at[1.0][i])) < 1e-12
            assert abs(at[0.25][i] - (0.75 * at[0.0][i] + 0.25 * at[1.0][i])) < 1e-12
    print("✓ affine in α\n")


def test_magnitude_loss():
    """Zero on identical input, mean |STFT| for y = 2x, symmetric."""
    print("Testing magnitude loss...")
    x = _signal()
    y = Waveform(2.0 * x.samples)
    assert magnitude_loss(x, x) == 0.0
    expected = float(np.mean(stft(Waveform(x.samples.astype(np.float64))).magnitude))
    assert abs(magnitude_loss(x, y) - expected) < 1e-6 * expected
    z = _signal(seed=1)
    assert abs(magnitude_loss(x, z) - magnitude_loss(z, x)) < 1e-12
    with pytest.raises(ArgumentError):
        magnitude_loss(x, _signal(2048))
    print("✓ magnitude loss\n")


def test_phase_loss():
    """Zero on identical or rescaled input, 2 for a sign flip, undefined on silence."""
    print("Testing phase loss...")
    x = _signal()
    assert phase_loss(x, x) < 1e-12
    assert phase_loss(x, Waveform(3.0 * x.samples)) < 1e-9
    assert abs(phase_loss(x, Waveform(-x.samples)) - 2.0) < 1e-9
    silence = Waveform(np.zeros(4096))
    with pytest.raises(DegenerateInputError):
        phase_loss(silence, silence)
    assert spectral_decomposition_loss(x, x) < 1e-12
    print("✓ phase loss\n")


def test_feature_matching():
    """Per sub-discriminator sum over layers, averaged over sub-discriminators."""
    print("Testing feature matching...")
    zeros = [DiscriminatorOutput(np.zeros((1, 2)), [np.zeros((2, 3)), np.zeros((1, 2))]),
             DiscriminatorOutput(np.zeros((1, 2)), [np.zeros((2, 3))])]
    ones = [DiscriminatorOutput(np.ones((1, 2)), [np.ones((2, 3)), np.ones((1, 2))]),
            DiscriminatorOutput(np.ones((1, 2)), [np.ones((2, 3))])]
    assert feature_matching_loss(zeros, zeros) == 0.0
    assert feature_matching_loss(zeros, ones) == 1.5
    with pytest.raises(ArgumentError):
        feature_matching_loss(zeros, ones[:1])
    with pytest.raises(ArgumentError):
        DiscriminatorOutput(np.zeros(1), [])
    print("✓ feature matching\n")


def test_total_loss_weights():
    """Default coefficients 0.7 / 1 / 45 / 1 / 1; bad inputs rejected."""
    print("Testing total loss...")
    total, terms = total_loss(1.0, 1.0, 1.0, {"recon": 0.1})
    assert abs(total - 7.2) < 1e-12
    assert terms["recon"] == pytest.approx(4.5) and terms["kl"] == 0.0
    total, _ = total_loss(0.0, 1.0, 0.0, weights=LossWeights(lambda_sd=2.0))
    assert total == 2.0
    with pytest.raises(ArgumentError):
        total_loss(-1.0, 0.0, 0.0)
    with pytest.raises(ArgumentError):
        total_loss(0.0, 0.0, 0.0, {"style": 1.0})
    with pytest.raises(ConfigError):
        LossWeights(lambda_fm=-1.0)
    with pytest.raises(ConfigError):
        LossWeights(alpha=2.0)
    print("✓ total loss\n")


def test_evaluate_losses_report():
    """Identical inputs leave only the generator term; the JSON report is complete."""
    print("Testing loss report...")
    theta = MultiPeriodDiscriminator(MPDConfig.desk(seed=0))
    psi = MultiPeriodDiscriminator(MPDConfig.desk(seed=1))
    x = _signal()
    same = evaluate_losses(x, x, theta, psi)
    assert same.l_mag == 0.0 and same.l_fm == 0.0 and same.l_phase < 1e-12
    assert abs(same.l_total - same.l_g) < 1e-9
    flipped = evaluate_losses(x, Waveform(-x.samples), theta, psi)
    assert abs(flipped.l_phase - 2.0) < 1e-9 and flipped.l_fm > 0
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "losses.json")
        flipped.to_json(path)
        with open(path) as f:
            data = json.load(f)
    assert set(data) == {"l_g", "l_d", "l_mag", "l_phase", "l_sd", "l_fm", "l_total", "weights"}
    assert data["weights"]["lambda_recon"] == 45.0
    assert isinstance(flipped, LossReport)
    print("✓ loss report\n")


def main():
    """Run all tests."""
    print("=" * 60)
    print("Adversarial Loss Tests")
    print("=" * 60 + "\n")

    try:
        test_fold_and_mpd_heights()
        test_adversarial_analytic_cases()
        test_adversarial_affine_in_alpha()
        test_magnitude_loss()
        test_phase_loss()
        test_feature_matching()
        test_total_loss_weights()
        test_evaluate_losses_report()

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
