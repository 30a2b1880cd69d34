"""WAV parsing/writing, normalization to 16 kHz mono, and 0.99 s segmentation."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

TARGET_RATE = 16000
SEGMENT_LENGTH = 15840  # 0.99 s at 16 kHz


class AudioError(ValueError):
    """Base class for audio decoding and shape errors."""


class MalformedRiff(AudioError):
    pass


class UnsupportedEncoding(AudioError):
    pass


class TruncatedData(AudioError):
    pass


class EmptyClip(AudioError):
    pass


class NotNormalized(AudioError):
    pass


@dataclass(frozen=True)
class AudioClip:
    """PCM audio as a (channels, n_samples) float array in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[np.newaxis, :]
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("samples must be 1-D or (channels, n) shaped")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if s.size and (not np.all(np.isfinite(s)) or np.max(np.abs(s)) > 1.0):
            raise ValueError("amplitudes must be finite and within [-1, 1]")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return (self.sample_rate == other.sample_rate
                and self.samples.shape == other.samples.shape
                and np.array_equal(self.samples, other.samples))

    __hash__ = None


@dataclass(frozen=True)
class Segment:
    samples: np.ndarray
    source_clip_id: str = ""
    index: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.shape != (SEGMENT_LENGTH,):
            raise ValueError(f"segment must hold exactly {SEGMENT_LENGTH} samples, got {s.shape}")
        if self.index < 0:
            raise ValueError("segment index must be >= 0")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)


def parse_wav(data: bytes) -> AudioClip:
    """Decode a PCM RIFF/WAVE byte string.

    16-bit samples map v -> v/32768; 8-bit samples are unsigned with a
    128 offset. Unknown chunks are skipped. Every read is bounds-checked
    against ``len(data)``.
    """
    data = bytes(data)
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedRiff("missing RIFF/WAVE header")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + size > len(data):
                raise MalformedRiff("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif chunk_id == b"data":
            if fmt is None:
                raise MalformedRiff("data chunk before fmt chunk")
            if body + size > len(data):
                raise TruncatedData(f"data chunk declares {size} bytes, {len(data) - body} present")
            pcm = data[body:body + size]
            break
        if body + size > len(data):
            raise MalformedRiff(f"chunk {chunk_id!r} overruns buffer")
        pos = body + size + (size & 1)

    if fmt is None:
        raise MalformedRiff("no fmt chunk")
    if pcm is None:
        raise MalformedRiff("no data chunk")

    tag, channels, rate, _byte_rate, block_align, bits = fmt
    if tag != 1:
        raise UnsupportedEncoding(f"format tag {tag} is not PCM")
    if bits not in (8, 16):
        raise UnsupportedEncoding(f"{bits}-bit samples are not supported")
    if channels < 1 or rate < 1:
        raise MalformedRiff("channel count and sample rate must be positive")
    width = bits // 8
    if block_align != channels * width:
        raise MalformedRiff("block_align does not match channels * sample width")
    if len(pcm) % block_align:
        raise TruncatedData("data chunk ends mid-frame")

    if bits == 16:
        raw = np.frombuffer(pcm, dtype="<i2").astype(np.float64) / 32768.0
    else:
        raw = (np.frombuffer(pcm, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    return AudioClip(raw.reshape(-1, channels).T, rate)


def _quantize(samples: np.ndarray) -> np.ndarray:
    q = np.round(samples * 32768.0)
    return np.clip(q, -32768, 32767).astype("<i2")


def write_wav(clip: AudioClip) -> bytes:
    """Serialize as 16-bit little-endian PCM with a 44-byte header."""
    interleaved = _quantize(clip.samples.T.reshape(-1))
    payload = interleaved.tobytes()
    channels = clip.channels
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, channels, clip.sample_rate,
        clip.sample_rate * channels * 2, channels * 2, 16,
        b"data", len(payload),
    )
    return header + payload


def is_normalized(clip: AudioClip) -> bool:
    return clip.channels == 1 and clip.sample_rate == TARGET_RATE


def normalize(clip: AudioClip) -> AudioClip:
    """Mix down to mono by channel mean and resample to 16 kHz by linear interpolation."""
    if clip.n_samples == 0:
        raise EmptyClip("clip has no samples")
    if is_normalized(clip):
        return clip
    mono = clip.samples.mean(axis=0)
    if clip.sample_rate == TARGET_RATE:
        out = mono
    else:
        n_out = int(round(clip.n_samples * TARGET_RATE / clip.sample_rate))
        if n_out == 0:
            raise EmptyClip("clip too short to resample")
        positions = np.arange(n_out) * (clip.sample_rate / TARGET_RATE)
        out = np.interp(positions, np.arange(clip.n_samples), mono)
    return AudioClip(np.clip(out, -1.0, 1.0), TARGET_RATE)


def slice_segments(clip: AudioClip, clip_id: str = "") -> list[Segment]:
    """Cut a normalized clip into consecutive non-overlapping 0.99 s segments.

    The trailing remainder shorter than one segment is dropped.
    """
    if not is_normalized(clip):
        raise NotNormalized(
            f"expected mono {TARGET_RATE} Hz, got {clip.channels} ch at {clip.sample_rate} Hz")
    mono = clip.samples[0]
    n = mono.size // SEGMENT_LENGTH
    return [Segment(mono[i * SEGMENT_LENGTH:(i + 1) * SEGMENT_LENGTH], clip_id, i)
            for i in range(n)]
