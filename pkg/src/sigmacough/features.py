"""MFCC front end built on a hand-written radix-2 FFT, mel filterbank and DCT-II."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import SEGMENT_LENGTH, TARGET_RATE, Segment


class NotPowerOfTwo(ValueError):
    pass


class InvalidBand(ValueError):
    pass


class BadLength(ValueError):
    pass


@dataclass(frozen=True)
class MfccConfig:
    pre_emphasis: float = 0.97
    frame_length: int = 400
    frame_hop: int = 160
    fft_size: int = 512
    n_mel_filters: int = 40
    mel_low_hz: float = 20.0
    mel_high_hz: float = 7600.0
    n_coefficients: int = 13
    energy_floor: float = 1e-10

    def validate(self, sample_rate: int = TARGET_RATE) -> None:
        if not _is_pow2(self.fft_size) or self.fft_size < self.frame_length:
            raise NotPowerOfTwo(f"fft_size {self.fft_size} must be a power of two >= frame_length")
        if self.frame_length < 2 or self.frame_hop < 1:
            raise BadLength("frame_length must be >= 2 and frame_hop >= 1")
        if not (0 <= self.mel_low_hz < self.mel_high_hz <= sample_rate / 2):
            raise InvalidBand(
                f"need 0 <= low < high <= {sample_rate / 2}, got {self.mel_low_hz}..{self.mel_high_hz}")
        if not (1 <= self.n_coefficients <= self.n_mel_filters):
            raise BadLength("need 1 <= n_coefficients <= n_mel_filters")
        if self.energy_floor <= 0:
            raise ValueError("energy_floor must be positive")

    def n_frames(self, n_samples: int = SEGMENT_LENGTH) -> int:
        return (n_samples - self.frame_length) // self.frame_hop + 1


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def fft(x) -> np.ndarray:
    """Unnormalized DFT along the last axis, iterative radix-2 decimation in time.

    Leading axes are treated as a batch.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise NotPowerOfTwo(f"length {n} is not a power of two")
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    a = x[..., rev].copy()
    batch = a.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(*batch, n // size, size)
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    return a


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(config: MfccConfig) -> np.ndarray:
    """Hz positions of the n_mel_filters + 2 triangle corner points."""
    mels = np.linspace(hz_to_mel(config.mel_low_hz), hz_to_mel(config.mel_high_hz),
                       config.n_mel_filters + 2)
    return mel_to_hz(mels)


def mel_filterbank(config: MfccConfig, sample_rate: int = TARGET_RATE) -> np.ndarray:
    """Triangular filters evaluated at the FFT bin frequencies.

    Row i rises from corner i to a peak of 1 at corner i+1 and falls to zero
    at corner i+2.
    """
    config.validate(sample_rate)
    return _filterbank_cached(config, sample_rate).copy()


@lru_cache(maxsize=16)
def _filterbank_cached(config: MfccConfig, sample_rate: int) -> np.ndarray:
    corners = mel_center_frequencies(config)
    freqs = np.arange(config.fft_size // 2 + 1) * sample_rate / config.fft_size
    bank = np.zeros((config.n_mel_filters, freqs.size))
    for i in range(config.n_mel_filters):
        lo, mid, hi = corners[i], corners[i + 1], corners[i + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    bank.setflags(write=False)
    return bank


@lru_cache(maxsize=16)
def _dct_basis(n: int) -> np.ndarray:
    t = np.arange(n)
    j = t[:, None]
    basis = np.cos(np.pi * j * (2 * t + 1) / (2 * n))
    basis[0] *= np.sqrt(1.0 / n)
    basis[1:] *= np.sqrt(2.0 / n)
    basis.setflags(write=False)
    return basis


def dct2(x, k: int | None = None) -> np.ndarray:
    """Orthonormal DCT-II along the last axis, keeping the first ``k`` outputs."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    k = n if k is None else k
    if n < 1 or not (1 <= k <= n):
        raise BadLength(f"need 1 <= k <= n, got k={k}, n={n}")
    return x @ _dct_basis(n)[:k].T


def hamming(length: int) -> np.ndarray:
    t = np.arange(length)
    return 0.54 - 0.46 * np.cos(2 * np.pi * t / (length - 1))


def frame_signal(signal: np.ndarray, config: MfccConfig) -> np.ndarray:
    n_frames = config.n_frames(signal.size)
    if n_frames < 1:
        raise BadLength(f"signal of {signal.size} samples is shorter than one frame")
    starts = np.arange(n_frames) * config.frame_hop
    return signal[starts[:, None] + np.arange(config.frame_length)]


def filterbank_energies(signal, config: MfccConfig = MfccConfig(),
                        sample_rate: int = TARGET_RATE) -> np.ndarray:
    """Per-frame mel filterbank power, shape (n_frames, n_mel_filters)."""
    config.validate(sample_rate)
    x = np.asarray(signal, dtype=np.float64)
    emphasized = np.concatenate([x[:1], x[1:] - config.pre_emphasis * x[:-1]])
    frames = frame_signal(emphasized, config) * hamming(config.frame_length)
    padded = np.zeros((frames.shape[0], config.fft_size))
    padded[:, :config.frame_length] = frames
    spectrum = fft(padded)[:, :config.fft_size // 2 + 1]
    power = spectrum.real ** 2 + spectrum.imag ** 2
    return power @ _filterbank_cached(config, sample_rate).T


def mfcc(segment, config: MfccConfig = MfccConfig(),
         sample_rate: int = TARGET_RATE) -> np.ndarray:
    """MFCC feature matrix of shape (n_frames, n_coefficients); 97 x 13 by default.

    ``segment`` may be a :class:`Segment` or a 1-D sample array.
    """
    samples = segment.samples if isinstance(segment, Segment) else segment
    energies = filterbank_energies(samples, config, sample_rate)
    log_e = np.log(np.maximum(energies, config.energy_floor))
    return dct2(log_e, config.n_coefficients)


def write_feature_csv(features: np.ndarray, path) -> None:
    """Debug dump: one row per frame, one column per coefficient."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"c{j}" for j in range(features.shape[1])])
        for row in features:
            w.writerow([repr(float(v)) for v in row])
