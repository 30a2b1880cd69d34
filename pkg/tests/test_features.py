import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sigmacough.features import (
    BadLength,
    InvalidBand,
    MfccConfig,
    NotPowerOfTwo,
    dct2,
    fft,
    filterbank_energies,
    hz_to_mel,
    mel_center_frequencies,
    mel_filterbank,
    mfcc,
)


def naive_dft(x):
    n = len(x)
    t = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * k * t / n)) for k in range(n)])


def test_fft_impulse_and_constant():
    x = np.zeros(64)
    x[0] = 1
    np.testing.assert_allclose(fft(x), np.ones(64), atol=1e-12)
    c = 0.75 - 0.25j
    out = fft(np.full(32, c))
    assert out[0] == pytest.approx(32 * c)
    assert np.max(np.abs(out[1:])) < 1e-12


@pytest.mark.parametrize("n", [1, 2, 4, 8, 64, 512, 1024])
def test_fft_matches_naive_dft(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    assert np.max(np.abs(fft(x) - naive_dft(x))) < 1e-9


def test_fft_batches_rows_independently():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 16))
    out = fft(x)
    for row, res in zip(x, out):
        np.testing.assert_allclose(res, naive_dft(row), atol=1e-12)


@pytest.mark.parametrize("n", [0, 3, 12, 100])
def test_fft_rejects_non_power_of_two(n):
    with pytest.raises(NotPowerOfTwo):
        fft(np.zeros(n))


@given(st.integers(0, 8), st.integers(0, 2**32 - 1),
       st.floats(-3, 3), st.floats(-3, 3))
def test_fft_linearity_and_parseval(log_n, seed, a, b):
    n = 2 ** log_n
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    y = rng.standard_normal(n)
    assert np.max(np.abs(fft(a * x + b * y) - (a * fft(x) + b * fft(y)))) < 1e-9
    X = fft(x)
    energy = np.sum(np.abs(x) ** 2)
    assert abs(energy - np.sum(np.abs(X) ** 2) / n) <= 1e-9 * energy


def test_filterbank_rows_nondegenerate_and_ordered():
    bank = mel_filterbank(MfccConfig())
    assert bank.shape == (40, 257)
    assert np.all(bank.max(axis=1) > 0)
    assert bank.min() >= 0 and bank.max() <= 1
    peaks = bank.argmax(axis=1)
    assert np.all(np.diff(peaks) > 0)


def test_two_filter_centers_hand_computed():
    # 2595 * log10(1 + 8000/700) = 2840.0230467 mel; thirds of that, inverted by hand
    cfg = MfccConfig(n_mel_filters=2, n_coefficients=2, mel_low_hz=0.0, mel_high_hz=8000.0, fft_size=512)
    corners = mel_center_frequencies(cfg)
    np.testing.assert_allclose(corners, [0.0, 921.4557863447225, 3055.8840958154033, 8000.0], rtol=1e-12)
    bank = mel_filterbank(cfg)
    freqs = np.arange(257) * 16000 / 512
    for row, center in zip(bank, corners[1:3]):
        assert abs(freqs[row.argmax()] - center) < 16000 / 512  # asymmetric slopes may pick either neighbour


def test_filterbank_triangle_values():
    cfg = MfccConfig()
    bank = mel_filterbank(cfg)
    c = mel_center_frequencies(cfg)
    freqs = np.arange(257) * 16000 / 512
    i, k = 10, int(np.searchsorted(freqs, c[11]))  # a bin just right of filter 10's peak
    expected = (c[12] - freqs[k]) / (c[12] - c[11])
    assert bank[i, k] == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("kwargs", [dict(mel_low_hz=5000, mel_high_hz=4000),
                                    dict(mel_high_hz=9000), dict(mel_low_hz=-1)])
def test_invalid_band(kwargs):
    with pytest.raises(InvalidBand):
        mel_filterbank(MfccConfig(**kwargs))


def test_config_validation():
    with pytest.raises(NotPowerOfTwo):
        MfccConfig(fft_size=256).validate()
    with pytest.raises(BadLength):
        MfccConfig(n_coefficients=41).validate()


def test_mel_scale_formula():
    assert hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2))


def test_dct_constant_and_single_point():
    y = dct2(np.full(40, 2.5))
    assert y[0] == pytest.approx(math.sqrt(40) * 2.5)
    assert np.max(np.abs(y[1:])) < 1e-12
    assert dct2(np.array([-3.25]), 1)[0] == -3.25


def test_dct_matches_direct_sum_and_parseval():
    rng = np.random.default_rng(11)
    x = rng.standard_normal(40)
    n = len(x)
    direct = [(math.sqrt(1 / n) if j == 0 else math.sqrt(2 / n))
              * sum(x[t] * math.cos(math.pi * j * (2 * t + 1) / (2 * n)) for t in range(n))
              for j in range(n)]
    y = dct2(x)
    np.testing.assert_allclose(y, direct, atol=1e-12)
    assert np.sum(y ** 2) == pytest.approx(np.sum(x ** 2), rel=1e-12)
    np.testing.assert_array_equal(dct2(x, 13), y[:13])


@pytest.mark.parametrize("k", [0, 41])
def test_dct_bad_length(k):
    with pytest.raises(BadLength):
        dct2(np.zeros(40), k)


def test_mfcc_shape_and_determinism():
    x = np.random.default_rng(0).uniform(-0.5, 0.5, 15840)
    a, b = mfcc(x), mfcc(x.copy())
    assert a.shape == (97, 13) == ((15840 - 400) // 160 + 1, 13)
    assert np.all(np.isfinite(a))
    assert a.tobytes() == b.tobytes()


def test_mfcc_of_silence():
    cfg = MfccConfig()
    out = mfcc(np.zeros(15840), cfg)
    np.testing.assert_array_equal(out, np.tile(out[0], (97, 1)))
    assert out[0, 0] == pytest.approx(math.sqrt(40) * math.log(1e-10))
    assert np.max(np.abs(out[:, 1:])) < 1e-9


def test_scaling_moves_only_c0():
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.3, 0.3, 15840)
    c = 2.5
    base, scaled = mfcc(x), mfcc(c * x)
    np.testing.assert_allclose(scaled[:, 1:], base[:, 1:], atol=1e-6)
    np.testing.assert_allclose(scaled[:, 0] - base[:, 0], math.sqrt(40) * 2 * math.log(c), atol=1e-9)


def test_sinusoid_energy_lands_in_covering_filter():
    t = np.arange(15840) / 16000
    x = np.sin(2 * np.pi * 1000 * t)
    cfg = MfccConfig()
    # independent per-step oracle: pre-emphasis, framing, window, numpy rfft, triangle weights
    emph = np.concatenate([x[:1], x[1:] - 0.97 * x[:-1]])
    win = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(400) / 399)
    frames = np.stack([emph[i * 160:i * 160 + 400] * win for i in range(97)])
    power = np.abs(np.fft.rfft(frames, 512)) ** 2
    bank = mel_filterbank(cfg)
    oracle = power @ bank.T
    np.testing.assert_allclose(filterbank_energies(x, cfg), oracle, rtol=1e-9)

    corners = mel_center_frequencies(cfg)
    covering = [i for i in range(40) if corners[i] < 1000 < corners[i + 2]]
    expected = max(covering, key=lambda i: bank[i, 32])  # bin 32 is exactly 1 kHz
    assert np.all(oracle.argmax(axis=1) == expected)
