from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from faultpipe.core import Label
from faultpipe.transforms import (
    RsfrParams,
    Signal,
    TransformError,
    WindowingParams,
    analytic_envelope,
    detrend,
    make_windows,
    normalize,
    notch_filter,
    park_transform,
    rsfr,
    savitzky_golay,
    stage_a_select,
    window_count,
    window_taper,
)

from conftest import make_record

FS = 8192.0


def _sine(f, n=16384, amp=1.0, fs=FS, phase=0.0):
    t = np.arange(n) / fs
    return Signal(amp * np.sin(2 * np.pi * f * t + phase), fs)


def _rms(x):
    return float(np.sqrt(np.mean(np.asarray(x) ** 2)))


def _peak_hz(x: Signal) -> float:
    n = 16 * len(x)  # zero padding for sub-bin resolution
    spec = np.abs(np.fft.rfft(x.values * np.hanning(len(x)), n))
    spec[:16] = 0.0
    return float(np.argmax(spec) * x.sample_rate_hz / n)


# ---------------------------------------------------------------- notch


def test_notch_kills_f0_and_spares_far_frequencies():
    for f0 in (16.6, 133.3):
        at = notch_filter(_sine(f0), f0)
        assert _rms(at.values[len(at) // 2:]) <= 0.1 * _rms(_sine(f0).values)
        far = _sine(5 * f0)
        out = notch_filter(far, f0)
        assert abs(_rms(out.values[len(out) // 2:]) / _rms(far.values) - 1.0) <= 0.02


def test_notch_constant_and_errors():
    out = notch_filter(Signal(np.full(4096, 3.0), FS), 50.0)
    assert np.allclose(out.values[2000:], 3.0, atol=1e-6)
    with pytest.raises(TransformError):
        notch_filter(_sine(10.0), FS)
    with pytest.raises(TransformError):
        notch_filter(_sine(10.0), 50.0, q=0.0)


# ---------------------------------------------------------------- RSFR


def test_rsfr_identity_is_exact():
    x = Signal(np.random.default_rng(0).normal(size=4096), FS)
    y = rsfr(x, RsfrParams(4.0, 4, 4.0))
    assert np.max(np.abs(y.values - x.values)) <= 1e-9


def test_rsfr_maps_2000_to_250_rpm_supply():
    x = _sine(2000 / 60 * 4)
    y = rsfr(x, RsfrParams(250 / 60, 4, 2000 / 60))
    assert len(y) == len(x)
    assert _peak_hz(y) == pytest.approx(250 / 60 * 4, rel=0.01)


def test_rsfr_aligns_two_speeds_on_a_common_target():
    target = 118.0 / 60.0
    peaks = []
    for rpm in (250.0, 2000.0):
        y = rsfr(_sine(rpm / 60 * 4), RsfrParams(target, 4, rpm / 60))
        peaks.append(_peak_hz(y))
    assert peaks[0] == pytest.approx(peaks[1], rel=0.01)
    assert peaks[0] == pytest.approx(target * 4, rel=0.01)


def test_rsfr_upsampling_pads_with_the_edge_value():
    x = _sine(250 / 60 * 4)
    y = rsfr(x, RsfrParams(1000 / 60, 4, 250 / 60))
    assert len(y) == len(x)
    tail = y.values[-100:]
    assert np.all(tail == tail[-1])


def test_rsfr_errors():
    with pytest.raises(TransformError):
        rsfr(_sine(10.0), RsfrParams(2000.0, 4, 10.0))  # target beyond Nyquist
    with pytest.raises(TransformError):
        rsfr(_sine(1.0, n=64), RsfrParams(2.0, 1, 1.0))  # fewer than 2 oscillations
    with pytest.raises(TransformError):
        RsfrParams(0.0, 4, 1.0)


@given(st.floats(1.0, 40.0), st.floats(1.0, 40.0), st.integers(256, 4096))
def test_rsfr_is_length_preserving(src, tgt, n):
    x = Signal(np.sin(np.arange(n) * 0.1), 2000.0)
    if n * src * 2 / 2000.0 < 2:
        return
    assert len(rsfr(x, RsfrParams(tgt, 2, src))) == n


# ---------------------------------------------------------------- Park


def _balanced(amp, theta):
    return [amp * np.cos(theta - k * 2 * np.pi / 3) for k in range(3)]


def test_park_balanced_set_gives_constant_d_zero_q():
    theta = 2 * np.pi * 50 * np.arange(1000) / 5000.0
    d, q = park_transform(*_balanced(2.5, theta), theta)
    assert np.max(np.abs(d - 2.5)) <= 1e-9
    assert np.max(np.abs(q)) <= 1e-9
    z = np.zeros_like(theta)
    d0, q0 = park_transform(z, z, z, theta)
    assert not d0.any() and not q0.any()


@given(arrays(np.float64, 64, elements=st.floats(-10, 10)), arrays(np.float64, 64, elements=st.floats(-5, 5)))
def test_park_rejects_zero_sequence(offset, phase_noise):
    theta = np.linspace(0, 4 * np.pi, 64)
    a, b, c = _balanced(1.0, theta)
    a, b, c = a + phase_noise, b - phase_noise, c
    d, q = park_transform(a, b, c, theta)
    d2, q2 = park_transform(a + offset, b + offset, c + offset, theta)
    assert np.allclose(d, d2, atol=1e-9) and np.allclose(q, q2, atol=1e-9)


def test_park_length_mismatch():
    with pytest.raises(TransformError):
        park_transform(np.zeros(4), np.zeros(4), np.zeros(5), np.zeros(4))


# ---------------------------------------------------------------- Savitzky-Golay


@given(st.floats(-5, 5), st.floats(-1, 1), st.floats(-0.01, 0.01), st.sampled_from([(5, 2), (5, 3), (7, 2)]))
def test_savgol_reproduces_quadratics(c0, c1, c2, wp):
    t = np.arange(200, dtype=float)
    x = c0 + c1 * t + c2 * t * t
    y = savitzky_golay(Signal(x, 1.0), *wp)
    assert np.max(np.abs(y.values - x)) <= 1e-9 * max(1.0, np.max(np.abs(x)))


def test_savgol_constant_denoise_and_errors():
    c = Signal(np.full(50, 2.0), 1.0)
    assert np.allclose(savitzky_golay(c, 5, 2).values, 2.0)
    rng = np.random.default_rng(1)
    clean = np.sin(2 * np.pi * np.arange(2000) / 200)
    noisy = clean + 0.3 * rng.normal(size=2000)
    out = savitzky_golay(Signal(noisy, 1.0), 5, 2).values
    assert np.var(out - clean) < np.var(noisy - clean)
    with pytest.raises(TransformError):
        savitzky_golay(c, 4, 2)
    with pytest.raises(TransformError):
        savitzky_golay(c, 5, 5)


# ---------------------------------------------------------------- stage A


def test_stage_a_select():
    rng = np.random.default_rng(2)
    rec = make_record("A", Label.HEALTHY, rng.normal(size=(3, 2048)), fs=FS, speed=2000.0, pole_pairs=4)
    raw = stage_a_select(rec, "Raw")
    assert np.array_equal(raw.values, rec.channels[0])
    notch = stage_a_select(rec, "Notch", notch_hz=133.3)
    assert np.array_equal(notch.values, notch_filter(raw, 133.3).values)
    park = stage_a_select(rec, "Park")
    assert len(park) == 2048
    sg = stage_a_select(rec, "Raw", savgol=(5, 2))
    assert np.array_equal(sg.values, savitzky_golay(raw, 5, 2).values)
    one = make_record("B", Label.HEALTHY, rng.normal(size=(1, 2048)), fs=FS)
    with pytest.raises(TransformError):
        stage_a_select(one, "Park")
    with pytest.raises(TransformError):
        stage_a_select(rec, "Wavelet")


# ---------------------------------------------------------------- windows


@pytest.mark.parametrize("n,s,w,offsets", [
    (4096, 1024, 0, [0, 1024, 2048, 3072]),
    (1024, 1024, 0, [0]),
    (2048, 1024, 512, [0, 512, 1024]),
])
def test_window_examples(n, s, w, offsets):
    ws = make_windows(Signal(np.arange(n, dtype=float), 1.0), WindowingParams(s, w))
    assert ws.offsets.tolist() == offsets
    assert ws.windows.shape == (len(offsets), s)
    for off, win in zip(offsets, ws.windows):
        assert win[0] == off


@given(st.integers(2, 3000), st.integers(2, 600), st.data())
def test_window_count_matches_enumeration(n, s, data):
    w = data.draw(st.integers(0, s - 1))
    p = WindowingParams(s, w)
    brute = [t for t in range(0, n, s - w) if t + s <= n]
    assert window_count(n, p) == len(brute)
    if n >= s:
        assert make_windows(np.zeros(n), p).offsets.tolist() == brute


def test_window_errors():
    with pytest.raises(TransformError):
        WindowingParams(1024, 1024)
    with pytest.raises(TransformError):
        make_windows(np.zeros(10), WindowingParams(16))


# ---------------------------------------------------------------- stage B


@given(arrays(np.float64, 64, elements=st.floats(-1e3, 1e3)), st.floats(0.1, 10), st.floats(-100, 100))
def test_normalize_is_affine_invariant(x, a, b):
    if np.std(x) < 1e-3:
        return
    y = normalize(x)
    assert abs(y.mean()) <= 1e-12 * 64 and abs(y.std() - 1) <= 1e-12 * 64
    assert np.allclose(normalize(a * x + b), y, atol=1e-9)


def test_normalize_constant_is_zero():
    assert not normalize(np.full(10, 4.0)).any()


def test_detrend():
    t = np.arange(500, dtype=float)
    assert np.max(np.abs(detrend(3 * t + 2))) <= 1e-9
    x = np.random.default_rng(3).normal(size=500)
    assert np.allclose(detrend(detrend(x)), detrend(x), atol=1e-9)
    d = detrend(x)
    assert abs(d.sum()) <= 1e-9 and abs(d @ (t - t.mean())) <= 1e-6


def test_detrend_full_period_sine_unchanged():
    t = np.arange(1000, dtype=float)
    s = np.sin(2 * np.pi * t / 1000 * 5)
    # integer periods: mean 0 and slope equal to the sine's own projection on t
    t0 = t - t.mean()
    slope = (s @ t0) / (t0 @ t0)
    assert np.allclose(detrend(s), s - s.mean() - slope * t0, atol=1e-12)


def test_envelope():
    t = np.arange(8192) / FS
    x = 2.0 * np.sin(2 * np.pi * 200 * t)
    env = analytic_envelope(x)
    mid = env[2048:6144]
    assert np.all(np.abs(mid - 2.0) <= 0.04)
    assert not analytic_envelope(np.zeros(64)).any()
    mod = 1 + 0.5 * np.sin(2 * np.pi * 4 * t)
    am = analytic_envelope(mod * np.sin(2 * np.pi * 800 * t))
    assert np.corrcoef(am[1000:-1000], mod[1000:-1000])[0, 1] >= 0.99


def test_taper():
    y = window_taper(np.ones(101))
    assert y[0] == 0.0 and y[-1] == 0.0 and y[50] == pytest.approx(1.0, abs=1e-15)
    rng = np.random.default_rng(4)
    ratios = [np.sum(window_taper(x) ** 2) / np.sum(x ** 2) for x in rng.normal(size=(50, 4096))]
    assert np.mean(ratios) == pytest.approx(0.375, rel=0.05)


@given(arrays(np.float64, st.integers(8, 128), elements=st.floats(-100, 100)))
def test_stage_b_is_length_preserving(x):
    for f in (normalize, detrend, analytic_envelope, window_taper):
        assert f(x).shape == x.shape
