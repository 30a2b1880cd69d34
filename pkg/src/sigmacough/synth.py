"""Seeded synthetic stand-ins for the spoken-digit and cough corpora.

Digits are harmonic tone stacks at f0 = 120 + 40 * digit Hz. Coughs are
decaying noise bursts: the covid class gets 2-4 short broadband bursts,
the healthy class a single longer burst of noise low-passed at 1.5 kHz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfilt

from .audio import SEGMENT_LENGTH, TARGET_RATE, Segment

COVID, HEALTHY = "covid", "healthy"
SAMPLES_PER_SUBJECT = 4


@dataclass(frozen=True)
class SynthSpec:
    rng_seed: int = 0
    n_per_class: int = 100
    f0_base_hz: float = 120.0
    f0_step_hz: float = 40.0
    harmonic_amplitudes: tuple = (1.0, 0.5, 0.25)
    covid_bursts: tuple = (2, 4)
    covid_decay_s: float = 0.030
    healthy_bursts: tuple = (1, 1)
    healthy_decay_s: float = 0.080
    healthy_cutoff_hz: float = 1500.0
    amplitude_jitter: float = 0.20
    timing_jitter_s: float = 0.050
    noise_level: float = 0.005
    max_days: int = 14

    def __post_init__(self):
        nyq = TARGET_RATE / 2
        top = (self.f0_base_hz + 9 * self.f0_step_hz) * len(self.harmonic_amplitudes)
        if top >= nyq or self.healthy_cutoff_hz >= nyq:
            raise ValueError("synthetic frequencies must stay below 8 kHz")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")

    def f0(self, digit: int) -> float:
        return self.f0_base_hz + self.f0_step_hz * digit


def _rng(spec: SynthSpec, *key: int) -> np.random.Generator:
    return np.random.default_rng([spec.rng_seed, *key])


def _finish(x: np.ndarray, clip_id: str, index: int) -> Segment:
    return Segment(np.clip(x, -1.0, 1.0), clip_id, index)


def gen_digit(spec: SynthSpec, digit: int, index: int) -> Segment:
    """0.99 s tone stack for one digit, deterministic in (seed, digit, index)."""
    if not 0 <= digit <= 9:
        raise ValueError("digit must be in 0..9")
    rng = _rng(spec, 1, digit, index)
    t = np.arange(SEGMENT_LENGTH) / TARGET_RATE
    f0 = spec.f0(digit)
    phases = rng.uniform(0, 2 * np.pi, size=len(spec.harmonic_amplitudes))
    tone = sum(a * np.sin(2 * np.pi * (h + 1) * f0 * t + ph)
               for h, (a, ph) in enumerate(zip(spec.harmonic_amplitudes, phases)))

    onset = 0.10 + rng.uniform(-1, 1) * spec.timing_jitter_s
    offset = 0.85 + rng.uniform(-1, 1) * spec.timing_jitter_s
    ramp = 0.02
    env = np.clip(np.minimum((t - onset) / ramp, (offset - t) / ramp), 0.0, 1.0)
    gain = 0.4 * (1 + rng.uniform(-1, 1) * spec.amplitude_jitter)
    noise = spec.noise_level * rng.standard_normal(SEGMENT_LENGTH)
    return _finish(gain * env * tone / sum(spec.harmonic_amplitudes) + noise, f"digit{digit}-{index}", 0)


def gen_digit_corpus(spec: SynthSpec) -> list:
    """(Segment, digit) pairs, n_per_class per digit, ordered by digit then index."""
    return [(gen_digit(spec, d, i), d) for d in range(10) for i in range(spec.n_per_class)]


def gen_cough(spec: SynthSpec, label: str, index: int, subject_gain: float = 1.0) -> Segment:
    rng = _rng(spec, 2, 0 if label == COVID else 1, index)
    if label == COVID:
        lo, hi = spec.covid_bursts
        decay = spec.covid_decay_s
    elif label == HEALTHY:
        lo, hi = spec.healthy_bursts
        decay = spec.healthy_decay_s
    else:
        raise ValueError(f"unknown cough label {label!r}")
    n_bursts = int(rng.integers(lo, hi + 1))
    t = np.arange(SEGMENT_LENGTH) / TARGET_RATE
    out = np.zeros(SEGMENT_LENGTH)
    slots = np.linspace(0.12, 0.70, n_bursts) if n_bursts > 1 else np.array([0.30])
    for start in slots:
        start = start + rng.uniform(-1, 1) * spec.timing_jitter_s
        noise = rng.standard_normal(SEGMENT_LENGTH)
        if label == HEALTHY:
            sos = butter(4, spec.healthy_cutoff_hz, btype="low", fs=TARGET_RATE, output="sos")
            noise = sosfilt(sos, noise)
            noise /= max(np.std(noise), 1e-12)
        rel = t - start
        env = np.where(rel >= 0, np.exp(-np.maximum(rel, 0) / decay), 0.0)
        attack = np.clip(rel / 0.004, 0.0, 1.0)
        amp = 0.25 * subject_gain * (1 + rng.uniform(-1, 1) * spec.amplitude_jitter)
        out += amp * env * attack * noise
    out += spec.noise_level * rng.standard_normal(SEGMENT_LENGTH)
    return _finish(out, f"{label}-{index}", 0)


def gen_cough_corpus(spec: SynthSpec) -> list:
    """(Segment, label, subject_id, day_index) tuples, covid first.

    Each class is spread over ceil(n_per_class / 4) subjects that never span
    both classes; a subject's samples fall on 1-4 distinct days.
    """
    n_subjects = math.ceil(spec.n_per_class / SAMPLES_PER_SUBJECT)
    corpus = []
    for class_no, label in enumerate((COVID, HEALTHY)):
        for s in range(n_subjects):
            members = range(s * SAMPLES_PER_SUBJECT, min((s + 1) * SAMPLES_PER_SUBJECT, spec.n_per_class))
            rng = _rng(spec, 3, class_no, s)
            gain = 1 + rng.uniform(-0.5, 0.5) * spec.amplitude_jitter
            n_days = int(rng.integers(1, len(members) + 1))
            later = sorted(rng.choice(np.arange(1, spec.max_days + 1), size=n_days - 1, replace=False))
            days = [0, *map(int, later)]
            subject_id = f"subj-{class_no * n_subjects + s:04d}"
            for j, idx in enumerate(members):
                day = days[j * n_days // len(members)]
                corpus.append((gen_cough(spec, label, idx, gain), label, subject_id, day))
    return corpus
