import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lockin import dsp


def test_alpha_small_gamma_limit():
    # gamma = 1/(0.6 * 200000); alpha ~ gamma - gamma^2/2 in the small limit
    coeff = dsp.compute_alpha(0.6, 200_000.0)
    gamma = 1.0 / (0.6 * 200_000.0)
    assert coeff.alpha == pytest.approx(gamma - gamma * gamma / 2.0, rel=1e-6)
    assert coeff.alpha == pytest.approx(8.3333e-6, rel=1e-4)


def test_alpha_quarter_rate_by_hand():
    # gamma = pi/2: cos = 0 so alpha = -1 + sqrt(3)
    coeff = dsp.compute_alpha(1.0 / (2.0 * math.pi), 4.0)
    assert coeff.alpha == pytest.approx(math.sqrt(3.0) - 1.0, abs=1e-12)


def test_alpha_monotone_in_cutoff():
    f_d = 200_000.0
    # increasing f_c at fixed rate means decreasing tau
    taus = [1.0 / (2.0 * math.pi * fc) for fc in np.linspace(10.0, f_d / 4.0, 40)]
    alphas = [dsp.compute_alpha(t, f_d).alpha for t in taus]
    assert all(a < b for a, b in zip(alphas, alphas[1:]))
    assert all(0.0 < a <= 1.0 for a in alphas)


def test_alpha_rejects_bad_parameters():
    with pytest.raises(dsp.DspError):
        dsp.compute_alpha(0.0, 200_000.0)
    with pytest.raises(dsp.DspError):
        dsp.compute_alpha(0.6, 0.0)
    with pytest.raises(dsp.DspError):
        # cutoff at half the rate: tau = 1/(pi * f_d)
        dsp.compute_alpha(1.0 / (math.pi * 10.0), 10.0)


def test_reference_pair_examples():
    q = dsp.reference_pair(0, 200, 1)
    assert (q.qx, q.qy) == (0.0, 2.0)
    q = dsp.reference_pair(50, 200, 1)
    assert q.qx == pytest.approx(2.0, abs=1e-12)
    assert q.qy == pytest.approx(0.0, abs=1e-12)
    q = dsp.reference_pair(50, 200, 2)
    assert q.qx == pytest.approx(0.0, abs=1e-12)
    assert q.qy == pytest.approx(-2.0, abs=1e-12)


def test_reference_pair_rejects():
    with pytest.raises(dsp.DspError):
        dsp.reference_pair(0, 2, 1)
    with pytest.raises(dsp.DspError):
        dsp.reference_pair(0, 200, 0)
    with pytest.raises(dsp.DspError):
        dsp.reference_pair(-1, 200, 1)


@given(st.integers(0, 10**9), st.integers(3, 100_000), st.integers(1, 50))
def test_reference_pair_magnitude(n, m, k):
    q = dsp.reference_pair(n, m, k)
    assert q.qx * q.qx + q.qy * q.qy == pytest.approx(4.0, abs=1e-12)


def test_mix_examples():
    q = dsp.QuadraturePair(qx=2.0, qy=0.0)
    assert dsp.mix(0.0, q) == (0.0, 0.0)
    assert dsp.mix(1.0, q) == (2.0, 0.0)


def test_mix_full_period_mean():
    # brute-force sum over one period of a locked tone, m = 200
    m, s0 = 200, 3.7
    xs, ys = [], []
    for n in range(m):
        s = s0 * math.sin(2.0 * math.pi * n / m)
        x0, y0 = dsp.mix(s, dsp.reference_pair(n, m, 1))
        xs.append(x0)
        ys.append(y0)
    assert np.mean(xs) == pytest.approx(s0, abs=1e-12)
    assert np.mean(ys) == pytest.approx(0.0, abs=1e-12)


def test_filter_step_fixed_point_and_passthrough():
    assert dsp.filter_step(1.23, 1.23, 0.37) == 1.23
    assert dsp.filter_step(0.0, 1.0, 1.0) == 1.0
    with pytest.raises(dsp.DspError):
        dsp.filter_step(0.0, 1.0, 0.0)
    with pytest.raises(dsp.DspError):
        dsp.filter_step(0.0, 1.0, 1.5)


def test_filter_step_geometric_sum():
    # n steps with constant input 1 from zero equals 1 - (1 - alpha)^n
    alpha, n = 0.01, 1000
    state = 0.0
    for _ in range(n):
        state = dsp.filter_step(state, 1.0, alpha)
    assert state == pytest.approx(1.0 - (1.0 - alpha) ** n, abs=1e-12)


def test_filter_dc_convergence_bound():
    # |state - c| <= (1 - alpha)^n |state0 - c| exactly
    alpha, c, state0 = 0.0173, -4.2, 9.9
    state = state0
    for n in range(1, 400):
        state = dsp.filter_step(state, c, alpha)
        bound = (1.0 - alpha) ** n * abs(state0 - c)
        assert abs(state - c) <= bound * (1.0 + 1e-12)


def test_cascade_matches_impulse_convolution():
    # independent oracle: convolve the squared one-stage impulse response
    rng = np.random.default_rng(7)
    x = rng.standard_normal(10_000)
    alpha = 0.002
    s1 = s2 = 0.0
    out = np.empty(len(x))
    for i, v in enumerate(x):
        s1 = dsp.filter_step(s1, v, alpha)
        s2 = dsp.filter_step(s2, s1, alpha)
        out[i] = s2
    j = np.arange(len(x), dtype=float)
    h2 = alpha * alpha * (j + 1.0) * (1.0 - alpha) ** j
    oracle = np.convolve(x, h2)[: len(x)]
    scale = np.maximum(np.abs(oracle), 1e-6)
    assert np.max(np.abs(out - oracle) / scale) < 1e-9


def test_demod_update_locked_tone_settles():
    # in-phase tone: x2 -> S0, y2 -> 0 after ten time constants
    m, f_d, tau, s0 = 200, 200_000.0, 0.02, 100.0
    alpha = dsp.compute_alpha(tau, f_d).alpha
    n_samples = int(10 * tau * f_d)
    ch = [dsp.HarmonicChannel(k=1)]
    tabs = dsp.reference_tables(m)
    n = np.arange(n_samples)
    s = s0 * np.sin(2.0 * np.pi * (n % m) / m)
    dsp.demod_block(ch, s, 0, m, alpha, tabs)
    assert ch[0].x2 == pytest.approx(s0, rel=5e-3)
    assert abs(ch[0].y2) < 5e-3 * s0


def test_demod_update_rejects_off_harmonic():
    # tone at the third harmonic leaves the fundamental channel near zero
    m, f_d, tau, s0 = 200, 200_000.0, 0.6, 100.0
    alpha = dsp.compute_alpha(tau, f_d).alpha
    n_samples = int(10 * tau * f_d)
    ch = [dsp.HarmonicChannel(k=1), dsp.HarmonicChannel(k=3)]
    tabs = dsp.reference_tables(m)
    n = np.arange(n_samples)
    s = s0 * np.sin(2.0 * np.pi * 3.0 * (n % m) / m)
    dsp.demod_block(ch, s, 0, m, alpha, tabs)
    r1 = math.hypot(ch[0].x2, ch[0].y2)
    r3 = math.hypot(ch[1].x2, ch[1].y2)
    assert r1 < 0.01 * s0
    assert r3 == pytest.approx(s0, rel=5e-3)


def test_demod_update_zero_input_stays_zero():
    channels = [dsp.HarmonicChannel(k=1), dsp.HarmonicChannel(k=2)]
    for n in range(50):
        dsp.demod_update(channels, 0.0, n, 200, 0.01)
    for ch in channels:
        assert (ch.x1, ch.x2, ch.y1, ch.y2) == (0.0, 0.0, 0.0, 0.0)


def test_demod_update_validation():
    with pytest.raises(dsp.DspError):
        dsp.demod_update([], 0.0, 0, 200, 0.01)
    with pytest.raises(dsp.DspError):
        dsp.demod_update(
            [dsp.HarmonicChannel(k=1), dsp.HarmonicChannel(k=1)], 0.0, 0, 200, 0.01
        )


def test_demod_linearity():
    # the chain is linear up to amplitude extraction, state for state
    rng = np.random.default_rng(3)
    s_a = rng.standard_normal(400)
    s_b = rng.standard_normal(400)
    a, b = 2.5, -0.7
    alpha, m = 0.01, 64
    cha = [dsp.HarmonicChannel(k=1)]
    chb = [dsp.HarmonicChannel(k=1)]
    chc = [dsp.HarmonicChannel(k=1)]
    for n in range(400):
        dsp.demod_update(cha, s_a[n], n, m, alpha)
        dsp.demod_update(chb, s_b[n], n, m, alpha)
        dsp.demod_update(chc, a * s_a[n] + b * s_b[n], n, m, alpha)
    for attr in ("x1", "x2", "y1", "y2"):
        combo = a * getattr(cha[0], attr) + b * getattr(chb[0], attr)
        got = getattr(chc[0], attr)
        assert got == pytest.approx(combo, rel=1e-12, abs=1e-12)


def test_amplitude_phase_examples():
    assert dsp.amplitude_phase(3.0, 4.0) == (
        pytest.approx(5.0),
        pytest.approx(math.atan2(4.0, 3.0)),
    )
    assert dsp.amplitude_phase(0.0, 0.0) == (0.0, 0.0)
    r, phi = dsp.amplitude_phase(-1.0, 0.0)
    assert (r, phi) == (1.0, math.pi)
    # negative zero quadrature must stay inside (-pi, pi]
    r, phi = dsp.amplitude_phase(-1.0, -0.0)
    assert phi == math.pi


@given(
    st.floats(-1e6, 1e6, allow_nan=False),
    st.floats(-1e6, 1e6, allow_nan=False),
)
def test_amplitude_phase_invariants(x, y):
    r, phi = dsp.amplitude_phase(x, y)
    assert r >= 0.0
    assert -math.pi < phi <= math.pi
    assert r * r == pytest.approx(x * x + y * y, rel=1e-12, abs=1e-300)


def test_sync_locked_tone_exact():
    m, s0 = 200, 41.5
    acc = dsp.SyncAccumulator(m=m)
    outputs = []
    for n in range(3 * m):
        s = s0 * math.sin(2.0 * math.pi * n / m)
        x0, y0 = dsp.mix(s, dsp.reference_pair(n, m, 1))
        emitted = dsp.sync_update(acc, x0, y0)
        assert 0 <= acc.count < m
        if emitted is not None:
            outputs.append(emitted)
    assert len(outputs) == 3
    for xbar, ybar in outputs:
        assert xbar == pytest.approx(s0, abs=1e-9)
        assert ybar == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("j", [2, 3, 5, 9])
def test_sync_nulls_higher_harmonics(j):
    m = 200
    acc = dsp.SyncAccumulator(m=m)
    for n in range(m):
        s = 100.0 * math.sin(2.0 * math.pi * j * n / m + 0.321)
        x0, y0 = dsp.mix(s, dsp.reference_pair(n, m, 1))
        emitted = dsp.sync_update(acc, x0, y0)
    assert emitted is not None
    assert abs(emitted[0]) < 1e-9
    assert abs(emitted[1]) < 1e-9


def test_sync_nulls_dc():
    m = 200
    acc = dsp.SyncAccumulator(m=m)
    for n in range(m):
        x0, y0 = dsp.mix(7.7, dsp.reference_pair(n, m, 1))
        emitted = dsp.sync_update(acc, x0, y0)
    assert emitted == (pytest.approx(0.0, abs=1e-9), pytest.approx(0.0, abs=1e-9))


def test_sync_is_plain_mean():
    rng = np.random.default_rng(11)
    m = 97
    xs = rng.standard_normal(m)
    ys = rng.standard_normal(m)
    acc = dsp.SyncAccumulator(m=m)
    for x, y in zip(xs[:-1], ys[:-1]):
        assert dsp.sync_update(acc, x, y) is None
    emitted = dsp.sync_update(acc, xs[-1], ys[-1])
    assert emitted[0] == pytest.approx(xs.mean(), rel=1e-12)
    assert emitted[1] == pytest.approx(ys.mean(), rel=1e-12)


def test_noise_constant_input_decays_to_zero():
    # matched-mean start decays monotonically; a mismatched start first
    # absorbs the step in the mean, then decays
    tracker = dsp.NoiseTracker(mean_r=5.0, var_r=2.0)
    last = math.sqrt(tracker.var_r)
    for _ in range(100):
        s2 = dsp.noise_update(tracker, 5.0, 0.1)
        assert s2 <= last + 1e-15
        last = s2
    assert last < 1e-2

    tracker = dsp.NoiseTracker(mean_r=3.0, var_r=2.0)
    values = [dsp.noise_update(tracker, 5.0, 0.1) for _ in range(200)]
    assert all(b <= a + 1e-15 for a, b in zip(values[10:], values[11:]))
    assert values[-1] < 1e-3


def test_noise_alternating_hand_iteration():
    # five steps of r in {2, 0, 2, 0, 2} at alpha = 0.5, iterated by hand
    tracker = dsp.NoiseTracker()
    expected_var = [1.0, 0.75, 0.9375, 0.859375, 0.90234375]
    for r, var in zip([2.0, 0.0, 2.0, 0.0, 2.0], expected_var):
        s2 = dsp.noise_update(tracker, r, 0.5)
        assert tracker.var_r == pytest.approx(var, abs=1e-15)
        assert s2 == pytest.approx(math.sqrt(var), abs=1e-15)


def _direct_weighted_variance(x: np.ndarray, alpha: float):
    # full-history oracle: weighted sums by direct convolution
    n = len(x)
    w = (1.0 - alpha) ** np.arange(n, dtype=float)
    mean_hist = alpha * np.convolve(x, w)[:n]
    prev_mean = np.concatenate(([0.0], mean_hist[:-1]))
    d2 = (x - prev_mean) ** 2
    var_hist = alpha * (1.0 - alpha) * np.convolve(d2, w)[:n]
    return mean_hist, var_hist


def test_noise_tracker_matches_direct_definition():
    rng = np.random.default_rng(5)
    x = np.abs(rng.standard_normal(10_000)) * 3.0 + 1.0
    alpha = 0.01
    mean_oracle, var_oracle = _direct_weighted_variance(x, alpha)
    tracker = dsp.NoiseTracker()
    for i, v in enumerate(x):
        dsp.noise_update(tracker, float(v), alpha)
        if i % 397 == 0 or i == len(x) - 1:
            assert tracker.mean_r == pytest.approx(mean_oracle[i], rel=1e-9)
            assert tracker.var_r == pytest.approx(var_oracle[i], rel=1e-9)
    assert tracker.var_r >= 0.0


# -- block path equivalence ---------------------------------------------------


def test_ema_block_matches_scalar():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(5_000)
    alpha = 0.03
    y_block, state = dsp.ema_block(x, alpha, 0.5)
    s = 0.5
    for i, v in enumerate(x):
        s = dsp.filter_step(s, v, alpha)
        assert y_block[i] == pytest.approx(s, rel=1e-12, abs=1e-12)
    assert state == pytest.approx(s, rel=1e-12)


def test_demod_block_matches_scalar_updates():
    rng = np.random.default_rng(9)
    s = rng.standard_normal(1_000) * 10.0
    m, alpha = 67, 0.004
    block = [dsp.HarmonicChannel(k=1), dsp.HarmonicChannel(k=3)]
    scalar = [dsp.HarmonicChannel(k=1), dsp.HarmonicChannel(k=3)]
    x2s, y2s = dsp.demod_block(block, s, 0, m, alpha, series_for=1)
    for n, v in enumerate(s):
        dsp.demod_update(scalar, float(v), n, m, alpha)
        assert x2s[n] == pytest.approx(scalar[0].x2, rel=1e-11, abs=1e-11)
        assert y2s[n] == pytest.approx(scalar[0].y2, rel=1e-11, abs=1e-11)
    for b, c in zip(block, scalar):
        for attr in ("x1", "x2", "y1", "y2"):
            assert getattr(b, attr) == pytest.approx(
                getattr(c, attr), rel=1e-11, abs=1e-12
            )


def test_demod_block_split_invariance():
    rng = np.random.default_rng(10)
    s = rng.standard_normal(999)
    whole = [dsp.HarmonicChannel(k=2)]
    parts = [dsp.HarmonicChannel(k=2)]
    dsp.demod_block(whole, s, 0, 50, 0.01)
    dsp.demod_block(parts, s[:123], 0, 50, 0.01)
    dsp.demod_block(parts, s[123:], 123, 50, 0.01)
    for attr in ("x1", "x2", "y1", "y2"):
        assert getattr(parts[0], attr) == pytest.approx(
            getattr(whole[0], attr), rel=1e-12
        )


def test_sync_block_matches_scalar():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(1_000)
    y = rng.standard_normal(1_000)
    m = 37
    acc_block = dsp.SyncAccumulator(m=m)
    block_out = []
    block_out += dsp.sync_block(acc_block, x[:400], y[:400])
    block_out += dsp.sync_block(acc_block, x[400:], y[400:])
    scalar_out = []
    acc = dsp.SyncAccumulator(m=m)
    for xv, yv in zip(x, y):
        emitted = dsp.sync_update(acc, float(xv), float(yv))
        if emitted is not None:
            scalar_out.append(emitted)
    assert len(block_out) == len(scalar_out)
    for (bx, by), (sx, sy) in zip(block_out, scalar_out):
        assert bx == pytest.approx(sx, rel=1e-12, abs=1e-12)
        assert by == pytest.approx(sy, rel=1e-12, abs=1e-12)
    assert acc_block.count == acc.count


def test_noise_block_matches_scalar():
    rng = np.random.default_rng(6)
    r2 = np.abs(rng.standard_normal(3_000)) * 2.0
    alpha = 0.02
    t_block = dsp.NoiseTracker()
    series = dsp.noise_block(t_block, r2, alpha)
    t_scalar = dsp.NoiseTracker()
    for i, v in enumerate(r2):
        s2 = dsp.noise_update(t_scalar, float(v), alpha)
        assert series[i] == pytest.approx(s2, rel=1e-11, abs=1e-12)
    assert t_block.mean_r == pytest.approx(t_scalar.mean_r, rel=1e-11)
    assert t_block.var_r == pytest.approx(t_scalar.var_r, rel=1e-11)


# -- step-response model -------------------------------------------------------


def test_step_response_model_values():
    assert dsp.step_response_model(0.0, 0.6, 380.0) == 0.0
    # 1 - 2/e and 1 - 11*exp(-10), evaluated independently
    assert dsp.step_response_model(0.6, 0.6, 1.0) == pytest.approx(
        1.0 - 2.0 * math.exp(-1.0), abs=1e-12
    )
    assert dsp.step_response_model(0.6, 0.6, 1.0) == pytest.approx(0.26424, abs=5e-6)
    assert dsp.step_response_model(6.0, 0.6, 1.0) == pytest.approx(
        1.0 - 11.0 * math.exp(-10.0), abs=1e-12
    )
    assert dsp.step_response_model(6.0, 0.6, 1.0) == pytest.approx(0.9995, abs=1e-4)


def test_step_response_model_validation():
    with pytest.raises(dsp.DspError):
        dsp.step_response_model(1.0, 0.0, 1.0)
    with pytest.raises(dsp.DspError):
        dsp.step_response_model(-1.0, 1.0, 1.0)
