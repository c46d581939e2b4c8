"""Per-recording feature extraction shared by training and inference."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import dsp, nmfd


@dataclass(frozen=True)
class FeatureConfig:
    window_s: float = 0.064
    hop_s: float = 0.032
    n_mel: int = 40
    n_ceps: int = 20
    delta_width: int = 2
    nmfd: nmfd.NmfdConfig = field(default_factory=nmfd.NmfdConfig)


class RecordingFeatures(NamedTuple):
    frames: np.ndarray  # (T, 2 * n_ceps) MFCC + deltas, input of the scene models
    rir: np.ndarray  # (n_ceps * K,) log-cepstral response descriptor, input of the SVM


def extract(clip: dsp.AudioClip, cfg: FeatureConfig = FeatureConfig()) -> RecordingFeatures:
    spec = dsp.stft(clip, cfg.window_s, cfg.hop_s)
    frames = dsp.mfcc(spec, cfg.n_mel, cfg.n_ceps, cfg.delta_width)
    result = nmfd.estimate_rir(spec.values, cfg.nmfd)
    rir = nmfd.parametrize_rir(result.rir, cfg.nmfd.n_ceps, cfg.nmfd.dct_axis)
    return RecordingFeatures(frames, rir)
