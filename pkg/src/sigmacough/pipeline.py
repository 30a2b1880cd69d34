"""Glue from raw audio to CNN inputs and off-the-shelf transfer features."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint
from .audio import AudioClip, normalize, parse_wav, slice_segments
from .convnet import ConvNetParams, ShapeMismatch, extract_features
from .features import MfccConfig, mfcc


@dataclass
class InputScaler:
    """Per-coefficient z-scoring of MFCC matrices ahead of the conv stack.

    Raw cepstra span tens of units (c0 tracks log energy), which would make
    He-initialized logits blow up; the statistics come from the source
    training set and travel with the checkpoint.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrices) -> "InputScaler":
        stacked = np.concatenate([np.asarray(m) for m in matrices], axis=0)
        return cls(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-8))

    def __call__(self, matrices):
        return (np.asarray(matrices, dtype=np.float64) - self.mean) / self.std


def clip_features(clip: AudioClip, config: MfccConfig = MfccConfig(), clip_id: str = "") -> np.ndarray:
    """MFCC matrices for every full 0.99 s segment of a clip, shape (n_segments, frames, coeffs)."""
    segments = slice_segments(normalize(clip), clip_id)
    if not segments:
        return np.zeros((0, config.n_frames(), config.n_coefficients))
    return np.stack([mfcc(s, config) for s in segments])


def wav_features(data: bytes, config: MfccConfig = MfccConfig(), clip_id: str = "") -> np.ndarray:
    return clip_features(parse_wav(data), config, clip_id)


def transfer_features(params: ConvNetParams, scaler: InputScaler, matrices,
                      batch_size: int = 128) -> np.ndarray:
    """1024-dim off-the-shelf features for a stack of MFCC matrices."""
    x = scaler(matrices)
    if len(x) == 0:
        return np.zeros((0, params.n_features))
    return np.concatenate([extract_features(params, x[i:i + batch_size])
                           for i in range(0, len(x), batch_size)])


def save_source_model(path, params: ConvNetParams, scaler: InputScaler,
                      mfcc_config: MfccConfig = MfccConfig(), train_config=None) -> str:
    """Checkpoint the CNN with its input scaler and the configs that produced it."""
    tensors = dict(params.named_tensors())
    tensors["input.mean"] = scaler.mean
    tensors["input.std"] = scaler.std
    config = {"mfcc": asdict(mfcc_config), "channels": list(params.channels)}
    seed = None
    if train_config is not None:
        config["train"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(train_config).items()}
        seed = train_config.rng_seed
    return checkpoint.save(path, "source_cnn", tensors, config, seed)


def load_source_model(path) -> tuple[ConvNetParams, InputScaler, MfccConfig]:
    tensors, header = checkpoint.load(path, kind="source_cnn")
    try:
        scaler = InputScaler(tensors.pop("input.mean"), tensors.pop("input.std"))
        params = ConvNetParams.from_named(tensors)
        mfcc_config = MfccConfig(**header["config"]["mfcc"])
    except (KeyError, TypeError) as exc:
        raise checkpoint.CheckpointError(f"checkpoint is missing {exc}") from None
    expected = tuple(header["config"].get("channels", params.channels))
    if params.channels != expected:
        raise ShapeMismatch(f"checkpoint declares channels {expected}, tensors have {params.channels}")
    if scaler.mean.shape != (mfcc_config.n_coefficients,):
        raise ShapeMismatch("input scaler does not match the MFCC coefficient count")
    return params, scaler, mfcc_config
