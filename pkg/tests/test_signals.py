import math

import numpy as np
import pytest

from lockin import signals
from lockin.signals import (
    ReferenceDriven,
    SignalSampler,
    Sine,
    Square,
    StepEnvelope,
    Sum,
    WhiteNoise,
    generate,
    noise_draws,
    reseed,
)


def test_sine_quarter_period_peak():
    assert generate(Sine(250.0, 1_000.0), 0.00025) == pytest.approx(250.0)


def test_step_envelope_gates_off():
    spec = StepEnvelope(Sine(380.0, 1_000.0), t_on_s=0.5)
    assert generate(spec, 0.499) == 0.0
    # the gate opens but the sine keeps its absolute phase
    assert generate(spec, 0.50025) == pytest.approx(380.0)


def test_square_levels():
    sq = Square(100.0, 1_000.0)
    assert generate(sq, 0.0) == 100.0
    assert generate(sq, 0.00049) == 100.0
    assert generate(sq, 0.0005) == -100.0
    assert generate(sq, 0.00099) == -100.0


def test_white_noise_statistics():
    z = noise_draws(42, 0, 1_000_000)
    assert abs(z.mean()) < 0.4 / 100.0  # 0.4 mV bound at rms 100 scales to 0.004
    rms = math.sqrt(float((z * z).mean()))
    assert abs(rms - 1.0) < 0.005


def test_white_noise_deterministic_and_splittable():
    a = noise_draws(7, 0, 1_000)
    b = noise_draws(7, 0, 1_000)
    assert np.array_equal(a, b)
    c = np.concatenate([noise_draws(7, 0, 123), noise_draws(7, 123, 877)])
    assert np.array_equal(a, c)
    assert not np.array_equal(noise_draws(8, 0, 1_000), a)


def test_generate_white_noise_matches_draws():
    spec = WhiteNoise(rms_mv=50.0, seed=3)
    want = 50.0 * noise_draws(3, 5, 1)[0]
    t = 5.0 / 200_000.0
    assert generate(spec, t) == pytest.approx(want, rel=1e-12)


def test_reference_driven_needs_context():
    with pytest.raises(signals.SignalError):
        generate(ReferenceDriven(100.0), 0.0)
    # transition ticks carry the band-limited midpoint
    assert generate(ReferenceDriven(100.0), 0.0, ref_m=200) == 0.0
    assert generate(ReferenceDriven(100.0), 1.0 / 200_000.0, ref_m=200) == 100.0
    t_low = 101.0 / 200_000.0
    assert generate(ReferenceDriven(100.0), t_low, ref_m=200) == -100.0


def test_validation():
    with pytest.raises(signals.SignalError):
        Sine(-1.0, 1_000.0)
    with pytest.raises(signals.SignalError):
        Sine(1.0, 0.0)
    with pytest.raises(signals.SignalError):
        WhiteNoise(rms_mv=-0.1)
    with pytest.raises(signals.SignalError):
        generate(Sine(1.0, 1.0), -0.1)


def test_reseed():
    spec = Sum(parts=(Sine(1.0, 10.0), WhiteNoise(2.0, seed=1),
                      StepEnvelope(WhiteNoise(3.0, seed=2), 1.0)))
    out = reseed(spec, 9)
    assert out.parts[1].seed == 9
    assert out.parts[2].inner.seed == 9
    assert out.parts[0] == spec.parts[0]


def test_sampler_matches_scalar_on_grid():
    rate = 200_000.0
    spec = Sum(parts=(
        Sine(10.0, 997.0, 0.3),
        Square(5.0, 250.0),
        WhiteNoise(2.0, seed=4),
    ))
    sampler = SignalSampler(spec, rate, oversample=1)
    block = sampler.block(100, 64)
    for i in range(64):
        t = (100 + i) / rate
        assert block[i] == pytest.approx(
            generate(spec, t, tick_rate_hz=rate), rel=1e-9, abs=1e-9
        )


def test_sampler_block_split_invariance():
    spec = Sum(parts=(Sine(10.0, 1_000.0), WhiteNoise(3.0, seed=5)))
    sampler = SignalSampler(spec, 200_000.0, oversample=4)
    whole = sampler.block(0, 400)
    parts = np.concatenate([sampler.block(0, 137), sampler.block(137, 263)])
    assert np.array_equal(whole, parts)


def test_sampler_noise_holds_within_tick():
    spec = WhiteNoise(rms_mv=1.0, seed=6)
    sampler = SignalSampler(spec, 200_000.0, oversample=4)
    block = sampler.block(0, 10)
    grouped = block.reshape(10, 4)
    assert np.all(grouped == grouped[:, :1])


def test_sampler_reference_driven():
    sampler = SignalSampler(ReferenceDriven(50.0), 200_000.0, oversample=2, ref_m=4)
    block = sampler.block(0, 8)
    # transitions land on tick edges at sub-instant resolution and carry 0
    per_period = [0.0, 50.0, 50.0, 50.0, 0.0, -50.0, -50.0, -50.0]
    assert block.tolist() == per_period * 2
    # sub-instant values agree with the scalar evaluation
    for i, value in enumerate(block):
        t = i / (2.0 * 200_000.0)
        assert value == generate(ReferenceDriven(50.0), t, ref_m=4)
