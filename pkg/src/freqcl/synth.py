"""Deterministic synthetic machine-sound corpus.

Normal clips are harmonic stacks over low-passed noise and a faint broadband
floor, so nearly all their energy sits below ~1.5 kHz.  Anomalous clips add
short band-limited chirps in a high band (4-7 kHz by default).  Sections differ by fundamental range;
the optional "target" domain differs from "source" by a louder noise floor.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .audio_io import Clip, scan_manifest, wav_bytes

# index offsets keep train / test-normal / test-anomaly seeds disjoint
TEST_NORMAL_BASE = 10_000
TEST_ANOMALY_BASE = 20_000


@dataclass(frozen=True)
class SynthConfig:
    f0_ranges: tuple = ((60.0, 75.0), (110.0, 125.0), (180.0, 195.0))
    machine_type: str = "machine"
    train_clips: int = 20
    test_normal: int = 20
    test_anomaly: int = 20
    harmonics: int = 6
    amp_jitter: float = 0.1
    detune: float = 0.002
    noise_level: float = 0.05
    noise_cutoff: float = 1000.0
    floor_db: float = -80.0
    domains: int = 2
    target_noise_gain: float = 1.5
    burst_band: tuple = (4000.0, 7000.0)
    bursts: tuple = (3, 6)
    burst_ms: tuple = (50.0, 200.0)
    burst_level: float = 1.0
    sample_rate: int = 16000
    seconds: float = 10.0
    seed: int = 0

    @property
    def sections(self):
        return len(self.f0_ranges)

    def validate(self):
        ranges = sorted(self.f0_ranges)
        for (lo, hi), (lo2, _) in zip(ranges, ranges[1:]):
            if hi >= lo2:
                raise ValueError("section f0 ranges must be disjoint")
        top = max(hi for _, hi in ranges) * self.harmonics * (1 + self.detune)
        if self.burst_band[0] <= top:
            raise ValueError(
                f"burst band starts at {self.burst_band[0]} Hz, below the highest harmonic ({top:.0f} Hz)"
            )
        if self.burst_band[1] > self.sample_rate / 2:
            raise ValueError("burst band exceeds Nyquist")
        if not 0 <= self.bursts[0] <= self.bursts[1]:
            raise ValueError("bursts must be a (lo, hi) range with 0 <= lo <= hi")
        if not 0 < self.burst_ms[0] <= self.burst_ms[1]:
            raise ValueError("burst_ms must be a (lo, hi) range with 0 < lo <= hi")
        if not 0 <= self.amp_jitter < 1:
            raise ValueError("amp_jitter must lie in [0, 1)")
        if self.domains not in (1, 2):
            raise ValueError("domains must be 1 or 2")
        return self


def section_name(section):
    return f"sec{section:02d}"


def domain_of(index, cfg):
    return "target" if cfg.domains == 2 and index % 2 == 1 else "source"


def _normal_waveform(section, index, cfg):
    """Un-normalised normal waveform."""
    rng = np.random.default_rng([cfg.seed, section, index, 0])
    n = int(round(cfg.seconds * cfg.sample_rate))
    t = np.arange(n) / cfg.sample_rate
    lo, hi = cfg.f0_ranges[section]
    f0 = rng.uniform(lo, hi)

    x = np.zeros(n)
    for k in range(1, cfg.harmonics + 1):
        f = k * f0 * (1 + rng.uniform(-cfg.detune, cfg.detune))
        amp = (1.0 - cfg.amp_jitter * rng.uniform()) / k
        x += amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))

    gain = cfg.target_noise_gain if domain_of(index, cfg) == "target" else 1.0
    sos = signal.butter(4, cfg.noise_cutoff, fs=cfg.sample_rate, output="sos")
    noise = signal.sosfilt(sos, rng.standard_normal(n))
    noise *= cfg.noise_level * gain * np.sqrt(np.mean(x ** 2)) / np.sqrt(np.mean(noise ** 2))
    x += noise
    # broadband sensor floor; keeps the top bands from showing only quantisation spurs
    x += 10 ** (cfg.floor_db / 20) * np.sqrt(np.mean(x ** 2)) * rng.standard_normal(n)
    return x


def _peak_normalize(x, peak=0.9):
    return x * (peak / np.max(np.abs(x)))


def _make_clip(samples, section, index, label, cfg):
    name = section_name(section)
    dom = domain_of(index, cfg) if cfg.domains == 2 else "source"
    return Clip(id=f"{name}_{dom}_{label}_{index:05d}", samples=samples,
                sample_rate=cfg.sample_rate, machine_type=cfg.machine_type,
                section=name, domain=dom, label=label)


def gen_normal(section, index, cfg=SynthConfig()):
    cfg.validate()
    x = _peak_normalize(_normal_waveform(section, index, cfg))
    return _make_clip(x, section, index, "normal", cfg)


def burst_count(section, index, cfg):
    rng = np.random.default_rng([cfg.seed, section, index, 1])
    return int(rng.integers(cfg.bursts[0], cfg.bursts[1] + 1))


def gen_anomaly(section, index, cfg=SynthConfig()):
    """Matched normal clip plus high-band chirp bursts at random times."""
    cfg.validate()
    x = _normal_waveform(section, index, cfg)
    peak = np.max(np.abs(x))
    rng = np.random.default_rng([cfg.seed, section, index, 1])
    count = int(rng.integers(cfg.bursts[0], cfg.bursts[1] + 1))
    lo, hi = cfg.burst_band
    margin = min(300.0, (hi - lo) / 4)
    for _ in range(count):
        dur = min(len(x), max(2, int(rng.uniform(*cfg.burst_ms) * 1e-3 * cfg.sample_rate)))
        start = int(rng.integers(0, len(x) - dur + 1))
        f_a, f_b = rng.uniform(lo + margin, hi - margin, size=2)
        tt = np.arange(dur) / cfg.sample_rate
        phase = 2 * np.pi * (f_a * tt + 0.5 * (f_b - f_a) / tt[-1] * tt ** 2)
        env = np.hanning(dur)
        amp = cfg.burst_level * peak * rng.uniform(0.5, 1.0)
        x[start:start + dur] += amp * env * np.sin(phase)
    return _make_clip(_peak_normalize(x), section, index, "anomaly", cfg)


def corpus_clips(cfg=SynthConfig()):
    """Yield ``(relative_path, clip)`` for every file of the corpus."""
    cfg.validate()
    for s in range(cfg.sections):
        for i in range(cfg.train_clips):
            yield "train", gen_normal(s, i, cfg)
        for i in range(cfg.test_normal):
            yield "test", gen_normal(s, TEST_NORMAL_BASE + i, cfg)
        for i in range(cfg.test_anomaly):
            yield "test", gen_anomaly(s, TEST_ANOMALY_BASE + i, cfg)


def gen_corpus(cfg, root):
    """Write the corpus as 16-bit WAV files under ``root`` and return its manifest.

    A ``manifest.csv`` is written next to the machine-type directory.
    """
    root = Path(root)
    for split, clip in corpus_clips(cfg):
        path = root / clip.machine_type / split / f"{clip.id}.wav"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(wav_bytes(clip.samples, clip.sample_rate))
    manifest = scan_manifest(root)
    (root / "manifest.csv").write_text(manifest.to_csv())
    return manifest


def band_energy_fraction(samples, sample_rate, f_lo):
    """Fraction of total spectral energy at frequencies >= f_lo."""
    spec = np.abs(np.fft.rfft(samples)) ** 2
    freqs = np.fft.rfftfreq(len(samples), 1 / sample_rate)
    return float(spec[freqs >= f_lo].sum() / spec.sum())
