"""Log-mel spectrogram front end.

Defaults reproduce the 128 x 313 feature map of a 10 s, 16 kHz clip:
1024-sample Hann frames, 512-sample hop, reflective centre padding, 128 HTK
mel bands with area-normalised triangles, natural log floored at 1e-10.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio_io import DEFAULT_SAMPLE_RATE
from .errors import ConfigError


@dataclass(frozen=True)
class FeatureConfig:
    frame_size: int = 1024
    hop: int = 512
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float | None = None  # None -> Nyquist
    log_floor: float = 1e-10
    sample_rate: int = DEFAULT_SAMPLE_RATE

    @property
    def upper(self):
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)

    @property
    def n_bins(self):
        return self.frame_size // 2 + 1

    def validate(self):
        if self.frame_size < 2 or self.frame_size % 2:
            raise ConfigError(f"frame_size must be an even integer >= 2, got {self.frame_size}")
        if not 1 <= self.hop <= self.frame_size:
            raise ConfigError(f"hop must satisfy 1 <= hop <= frame_size, got {self.hop}")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not 0 <= self.fmin < self.upper <= self.sample_rate / 2:
            raise ConfigError(
                f"need 0 <= fmin < fmax <= {self.sample_rate / 2}, "
                f"got fmin={self.fmin}, fmax={self.upper}"
            )
        if not self.log_floor > 0:
            raise ConfigError("log_floor must be positive")
        return self


@dataclass
class LogMelSpectrogram:
    values: np.ndarray  # (n_mels, n_frames), natural log
    config: FeatureConfig
    clip_id: str = ""

    @property
    def shape(self):
        return self.values.shape


def n_frames(n_samples, hop):
    return 1 + n_samples // hop


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(x, frame_size, hop):
    """Reflect-pad by frame_size/2 on both ends and cut frames every ``hop``."""
    x = np.asarray(x, dtype=np.float64)
    half = frame_size // 2
    if len(x) > half:
        padded = np.pad(x, half, mode="reflect")
    else:
        # reflection needs len(x) > pad; very short clips fall back to zeros
        padded = np.pad(x, half, mode="constant")
    count = n_frames(len(x), hop)
    idx = np.arange(frame_size)[None, :] + hop * np.arange(count)[:, None]
    return padded[idx]


def stft_power(samples, cfg=FeatureConfig()):
    """Power spectrogram of shape (frame_size/2 + 1, n_frames)."""
    cfg.validate()
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 1:
        raise ValueError("empty clip")
    frames = frame_signal(samples, cfg.frame_size, cfg.hop)
    window = np.hanning(cfg.frame_size + 1)[:-1]  # periodic Hann
    spec = np.fft.rfft(frames * window, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def mel_centers(cfg):
    """Edge and centre frequencies (Hz) of the mel triangles: n_mels + 2 points."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.upper), cfg.n_mels + 2)
    return mel_to_hz(mels)


@lru_cache(maxsize=16)
def _filterbank(cfg):
    cfg.validate()
    hz = mel_centers(cfg)
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.frame_size
    left, center, right = hz[:-2, None], hz[1:-1, None], hz[2:, None]
    up = (freqs[None, :] - left) / (center - left)
    down = (right - freqs[None, :]) / (right - center)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb *= (2.0 / (right - left))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        m = int(empty[0])
        raise ConfigError(
            f"mel filter {m} ({hz[m]:.1f}-{hz[m + 2]:.1f} Hz) covers no DFT bin; "
            f"reduce n_mels or increase frame_size"
        )
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg=FeatureConfig()):
    """Read-only (n_mels, frame_size/2 + 1) matrix of area-normalised triangles."""
    return _filterbank(cfg)


def log_mel(clip, cfg=FeatureConfig()):
    """Log-mel spectrogram of a :class:`~freqcl.audio_io.Clip`."""
    if clip.sample_rate != cfg.sample_rate:
        raise ConfigError(
            f"clip {clip.id!r} is {clip.sample_rate} Hz, features configured for {cfg.sample_rate} Hz"
        )
    power = stft_power(clip.samples, cfg)
    mel = mel_filterbank(cfg) @ power
    values = np.log(np.maximum(mel, cfg.log_floor))
    return LogMelSpectrogram(values=values, config=cfg, clip_id=clip.id)
