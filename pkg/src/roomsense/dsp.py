"""Audio front end: WAV I/O, magnitude STFT, MFCC + deltas, row-wise DCT."""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import DataError

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError(f"expected mono samples, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise DataError("audio contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    """F x T magnitude spectrogram (frequency rows, time columns)."""

    values: np.ndarray
    sample_rate: int
    n_fft: int
    hop: int

    @property
    def frame_hop_s(self) -> float:
        return self.hop / self.sample_rate

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.n_fft

    @property
    def shape(self):
        return self.values.shape


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM WAV; multi-channel input is averaged to mono."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            if w.getsampwidth() != 2 or w.getcomptype() != "NONE":
                raise DataError(f"{path}: only 16-bit PCM WAV is supported")
            n_channels = w.getnchannels()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        pcm = pcm[: len(pcm) // n_channels * n_channels].reshape(-1, n_channels).mean(axis=1)
    return AudioClip(pcm, rate)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())


def frame_params(sample_rate: int, window_s: float, hop_s: float) -> tuple[int, int, int]:
    """(window samples, hop samples, FFT length) for the given durations."""
    win = int(round(window_s * sample_rate))
    hop = int(round(hop_s * sample_rate))
    if win < 2:
        raise DataError(f"window of {window_s} s is shorter than 2 samples")
    if hop < 1 or hop > win:
        raise DataError(f"hop must satisfy 1 <= hop <= window samples (hop={hop}, window={win})")
    n_fft = 1 << (win - 1).bit_length()
    return win, hop, n_fft


def n_frames(n_samples: int, win: int, hop: int) -> int:
    """Frames that fit entirely inside the signal; the tail is dropped, not padded."""
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


def stft(clip: AudioClip, window_s: float = 0.064, hop_s: float = 0.032) -> Spectrogram:
    win, hop, n_fft = frame_params(clip.sample_rate, window_s, hop_s)
    T = n_frames(len(clip.samples), win, hop)
    if T == 0:
        raise DataError(
            f"input too short: {len(clip.samples)} samples < one {win}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, win)[::hop][:T]
    spec = np.abs(np.fft.rfft(frames * np.hamming(win), n=n_fft, axis=1))
    return Spectrogram(spec.T.copy(), clip.sample_rate, n_fft, hop)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mel: int, n_fft: int, sample_rate: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters, shape (n_mel, n_fft // 2 + 1), each normalized to unit area.

    Unit area makes a flat spectrum map to equal energy in every band.
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mel + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    area = fb.sum(axis=1, keepdims=True)
    if np.any(area == 0):
        raise DataError(f"{n_mel} mel bands are too narrow for a {n_fft}-point FFT")
    return fb / area


def dct_rows(matrix, keep: int | None = None) -> np.ndarray:
    """Orthonormal DCT-II of each row, truncated to the first ``keep`` coefficients."""
    matrix = np.asarray(matrix, dtype=np.float64)
    keep = matrix.shape[-1] if keep is None else keep
    if keep > matrix.shape[-1]:
        raise DataError(f"keep={keep} exceeds row length {matrix.shape[-1]}")
    return scipy.fft.dct(matrix, type=2, norm="ortho", axis=-1)[..., :keep]


def idct_rows(coeffs) -> np.ndarray:
    return scipy.fft.idct(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho", axis=-1)


def deltas(features: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-width frames with edge replication; rows are frames."""
    T = features.shape[0]
    padded = np.pad(features, ((width, width), (0, 0)), mode="edge")
    num = np.zeros_like(features, dtype=np.float64)
    for n in range(1, width + 1):
        num += n * (padded[width + n : width + n + T] - padded[width - n : width - n + T])
    return num / (2 * sum(n * n for n in range(1, width + 1)))


def log_mel_energies(spec: Spectrogram, n_mel: int = 40) -> np.ndarray:
    fb = mel_filterbank(n_mel, spec.n_fft, spec.sample_rate)
    return np.log(np.maximum(fb @ spec.values**2, LOG_FLOOR)).T


def mfcc(spec: Spectrogram, n_mel: int = 40, n_ceps: int = 20, delta_width: int = 2) -> np.ndarray:
    """Static cepstra plus deltas, shape (T, 2 * n_ceps)."""
    F = spec.values.shape[0]
    if not n_ceps <= n_mel <= F:
        raise DataError(f"need n_ceps <= n_mel <= F, got {n_ceps}, {n_mel}, {F}")
    ceps = dct_rows(log_mel_energies(spec, n_mel), n_ceps)
    return np.hstack([ceps, deltas(ceps, delta_width)])
