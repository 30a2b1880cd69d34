import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigmacough.audio import (
    SEGMENT_LENGTH,
    AudioClip,
    EmptyClip,
    MalformedRiff,
    NotNormalized,
    TruncatedData,
    UnsupportedEncoding,
    normalize,
    parse_wav,
    slice_segments,
    write_wav,
)


def riff(fmt_tag=1, channels=1, rate=16000, bits=16, payload=b"", declared=None):
    """Assemble a WAV by hand from the RIFF layout."""
    block = channels * bits // 8
    size = len(payload) if declared is None else declared
    return (b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
            + b"fmt " + struct.pack("<IHHIIHH", 16, fmt_tag, channels, rate, rate * block, block, bits)
            + b"data" + struct.pack("<I", size) + payload)


def test_empty_bytes_are_malformed():
    with pytest.raises(MalformedRiff):
        parse_wav(b"")


def test_hand_assembled_header_scaling():
    payload = struct.pack("<4h", 0, 16384, -16384, 32767)
    data = riff(payload=payload)
    assert len(data) == 44 + 8
    clip = parse_wav(data)
    assert clip.sample_rate == 16000 and clip.channels == 1
    np.testing.assert_array_equal(clip.samples[0], [0.0, 0.5, -0.5, 32767 / 32768])


def test_eight_bit_offset_convention():
    clip = parse_wav(riff(bits=8, payload=bytes([128, 255, 0])))
    np.testing.assert_array_equal(clip.samples[0], [0.0, 127 / 128, -1.0])


def test_stereo_interleaving():
    payload = struct.pack("<4h", 100, -100, 200, -200)
    clip = parse_wav(riff(channels=2, payload=payload))
    assert clip.samples.shape == (2, 2)
    np.testing.assert_array_equal(clip.samples[1] * 32768, [-100, -200])


@pytest.mark.parametrize("kwargs, exc", [
    (dict(fmt_tag=3), UnsupportedEncoding),
    (dict(bits=24, payload=b"\0" * 6), UnsupportedEncoding),
    (dict(payload=b"\0\0", declared=10), TruncatedData),
])
def test_rejections(kwargs, exc):
    with pytest.raises(exc):
        parse_wav(riff(**kwargs))


def test_odd_payload_mid_frame():
    with pytest.raises(TruncatedData):
        parse_wav(riff(payload=b"\0\0\0"))


def test_skips_unknown_chunks():
    base = riff(payload=struct.pack("<h", 1000))
    extra = b"LIST" + struct.pack("<I", 3) + b"abc" + b"\0"  # odd size gets a pad byte
    data = base[:12] + extra + base[12:]
    assert parse_wav(data).samples[0, 0] == 1000 / 32768


def test_write_one_sample_is_46_bytes():
    data = write_wav(AudioClip(np.zeros(1), 16000))
    assert len(data) == 46
    assert data[:4] == b"RIFF" and data[8:12] == b"WAVE"
    assert struct.unpack_from("<I", data, 4)[0] == 38


def test_write_is_deterministic():
    clip = AudioClip(np.linspace(-1, 1, 101), 16000)
    assert write_wav(clip) == write_wav(AudioClip(np.linspace(-1, 1, 101), 16000))


clips = st.builds(
    lambda ch, n, rate, seed: AudioClip(np.random.default_rng(seed).uniform(-1, 1, (ch, n)), rate),
    st.integers(1, 3), st.integers(0, 400), st.sampled_from([8000, 16000, 22050, 44100]),
    st.integers(0, 2**32 - 1),
)


@given(clips)
def test_round_trip_within_quantization(clip):
    back = parse_wav(write_wav(clip))
    assert back.sample_rate == clip.sample_rate and back.samples.shape == clip.samples.shape
    if clip.n_samples:
        assert np.max(np.abs(back.samples - clip.samples)) <= 1 / 32768


@settings(max_examples=300)
@given(st.binary(max_size=120))
def test_garbage_never_yields_a_clip_silently(junk):
    try:
        clip = parse_wav(junk)
    except (MalformedRiff, UnsupportedEncoding, TruncatedData):
        return
    # anything that does parse must be internally consistent
    assert clip.samples.shape[0] >= 1 and np.all(np.abs(clip.samples) <= 1)


@given(st.integers(0, 200), clips.filter(lambda c: c.n_samples > 0))
def test_truncations_of_valid_files_are_rejected(cut, clip):
    data = write_wav(clip)
    cut = min(cut, len(data) - 1)
    truncated = data[:len(data) - 1 - cut]
    with pytest.raises((MalformedRiff, TruncatedData)):
        parse_wav(truncated)


def test_normalize_identity_for_canonical_clip():
    clip = AudioClip(np.random.default_rng(0).uniform(-1, 1, 500), 16000)
    assert normalize(clip) is clip


def test_twelve_second_recording_length():
    clip = AudioClip(np.zeros((2, 12 * 44100)), 44100)
    assert normalize(clip).n_samples == 192_000


def test_stereo_44k1_matches_direct_interpolation():
    rng = np.random.default_rng(7)
    left, right = rng.uniform(-1, 1, 44100), rng.uniform(-1, 1, 44100)
    out = normalize(AudioClip(np.stack([left, right]), 44100))
    assert out.n_samples == 16000 and out.channels == 1
    for i in range(0, 16000, 997):
        pos = i * (44100 / 16000)
        lo = int(np.floor(pos))
        frac = pos - lo
        hi = min(lo + 1, 44099)
        mean_lo = (left[lo] + right[lo]) / 2
        mean_hi = (left[hi] + right[hi]) / 2
        assert out.samples[0, i] == pytest.approx(mean_lo + frac * (mean_hi - mean_lo), abs=1e-12)


@given(clips.filter(lambda c: c.n_samples * 16000 / c.sample_rate >= 0.5))
def test_normalize_idempotent(clip):
    once = normalize(clip)
    assert normalize(once) == once
    assert once.n_samples == round(clip.n_samples * 16000 / clip.sample_rate)


def test_normalize_empty():
    with pytest.raises(EmptyClip):
        normalize(AudioClip(np.zeros((1, 0)), 16000))


@pytest.mark.parametrize("n, expected", [(192_000, 12), (15_839, 0), (15_840, 1), (31_679, 1)])
def test_slice_counts(n, expected):
    assert len(slice_segments(AudioClip(np.zeros(n), 16000))) == expected
    assert expected == n // SEGMENT_LENGTH


def test_slice_exact_fit_and_concatenation():
    x = np.random.default_rng(1).uniform(-1, 1, 3 * SEGMENT_LENGTH + 123)
    segs = slice_segments(AudioClip(x, 16000), "clip")
    assert [s.index for s in segs] == [0, 1, 2]
    np.testing.assert_array_equal(np.concatenate([s.samples for s in segs]), x[:3 * SEGMENT_LENGTH])
    one = slice_segments(AudioClip(x[:SEGMENT_LENGTH], 16000))
    np.testing.assert_array_equal(one[0].samples, x[:SEGMENT_LENGTH])


def test_slice_requires_normalized():
    with pytest.raises(NotNormalized):
        slice_segments(AudioClip(np.zeros(20000), 44100))
