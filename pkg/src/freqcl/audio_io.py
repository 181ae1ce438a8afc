"""WAV reading/writing and dataset manifests.

Only the small subset of RIFF/WAVE that machine-sound corpora actually use is
supported: 16-bit PCM and 32-bit IEEE float, any channel count (channel 0 is
kept).  The corpus layout on disk is::

    <root>/<machine_type>/<split>/<section>_<domain>_<label>_<id>.wav
"""

import csv
import io
import logging
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, UnsupportedCodecError, WavFormatError

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_CLIP_SECONDS = 10.0

_FORMAT_PCM = 1
_FORMAT_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE

LABELS = ("normal", "anomaly", "unknown")
DOMAINS = ("source", "target", "na")
SPLITS = ("train", "test")

_NAME_RE = re.compile(
    r"^(?P<section>[A-Za-z0-9-]+)_(?P<domain>source|target|na)_"
    r"(?P<label>normal|anomaly|unknown)_(?P<id>[A-Za-z0-9-]+)\.wav$"
)


@dataclass
class Clip:
    """A mono waveform plus the metadata needed to group and evaluate it."""

    id: str
    samples: np.ndarray
    sample_rate: int
    machine_type: str = ""
    section: str = ""
    domain: str = "na"
    label: str = "unknown"

    @property
    def class_key(self):
        return f"{self.machine_type}/{self.section}"

    def __len__(self):
        return len(self.samples)


def _parse_chunks(data):
    if len(data) < 12:
        raise WavFormatError("RIFF", "file shorter than the 12-byte RIFF header")
    riff, _, wave = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF":
        raise WavFormatError("RIFF", f"bad magic {riff!r}")
    if wave != b"WAVE":
        raise WavFormatError("RIFF", f"form type is {wave!r}, expected b'WAVE'")

    chunks = {}
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        name = cid.decode("ascii", errors="replace")
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(name, f"declares {size} bytes, only {len(body)} present")
        chunks.setdefault(name, body)
        pos += 8 + size + (size & 1)
    return chunks


def read_wav(path):
    """Read a WAV file into a :class:`Clip` carrying samples and rate only.

    16-bit PCM is scaled by 1/32768; float32 data is taken as is.  Multi-channel
    files keep channel 0.
    """
    path = Path(path)
    chunks = _parse_chunks(path.read_bytes())
    if "fmt " not in chunks:
        raise WavFormatError("fmt ", "chunk missing")
    if "data" not in chunks:
        raise WavFormatError("data", "chunk missing")

    fmt = chunks["fmt "]
    if len(fmt) < 16:
        raise WavFormatError("fmt ", f"chunk is {len(fmt)} bytes, need at least 16")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise WavFormatError("fmt ", "WAVE_FORMAT_EXTENSIBLE without sub-format")
        tag = struct.unpack("<H", fmt[24:26])[0]
    if channels < 1:
        raise WavFormatError("fmt ", "zero channels")
    if rate <= 0:
        raise WavFormatError("fmt ", "non-positive sample rate")

    if tag == _FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _FORMAT_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedCodecError(
            f"{path}: format tag {tag} with {bits} bits/sample is not supported "
            "(16-bit PCM or 32-bit float only)"
        )
    if block_align != channels * dtype.itemsize:
        raise WavFormatError("fmt ", f"block align {block_align} inconsistent with "
                                     f"{channels} x {bits}-bit channels")

    raw = chunks["data"]
    n_frames = len(raw) // block_align
    frames = np.frombuffer(raw[:n_frames * block_align], dtype=dtype)
    samples = frames.reshape(n_frames, channels)[:, 0].astype(np.float64) * scale
    if not np.all(np.isfinite(samples)):
        raise WavFormatError("data", "non-finite float samples")
    samples = np.clip(samples, -1.0, 1.0)
    return Clip(id=path.stem, samples=samples, sample_rate=int(rate))


def wav_bytes(samples, sample_rate, *, float32=False):
    """Serialize mono samples in [-1, 1] as a WAV byte string."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    if float32:
        payload = x.astype("<f4").tobytes()
        tag, bits = _FORMAT_FLOAT, 32
    else:
        q = np.clip(np.round(x * 32768.0), -32768, 32767)
        payload = q.astype("<i2").tobytes()
        tag, bits = _FORMAT_PCM, 16
    block = bits // 8
    buf = io.BytesIO()
    buf.write(struct.pack("<4sI4s", b"RIFF", 36 + len(payload), b"WAVE"))
    buf.write(struct.pack("<4sIHHIIHH", b"fmt ", 16, tag, 1, sample_rate,
                          sample_rate * block, block, bits))
    buf.write(struct.pack("<4sI", b"data", len(payload)))
    buf.write(payload)
    return buf.getvalue()


def write_wav(path, samples, sample_rate=DEFAULT_SAMPLE_RATE, *, float32=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(wav_bytes(samples, sample_rate, float32=float32))


def fit_length(clip, seconds=DEFAULT_CLIP_SECONDS):
    """Trim or zero-pad ``clip`` at the end to exactly ``seconds`` long."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    n = int(round(seconds * clip.sample_rate))
    x = clip.samples
    if len(x) >= n:
        out = x[:n].copy()
    else:
        out = np.zeros(n, dtype=x.dtype)
        out[:len(x)] = x
    return replace(clip, samples=out)


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the manifest root, posix separators
    machine_type: str
    split: str
    section: str
    domain: str
    label: str

    @property
    def class_key(self):
        return f"{self.machine_type}/{self.section}"

    @property
    def clip_id(self):
        return self.path[:-4] if self.path.endswith(".wav") else self.path


@dataclass
class DatasetManifest:
    root: Path
    entries: list
    warnings: list = field(default_factory=list)

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def filter(self, machine_type=None, section=None):
        keep = [e for e in self.entries
                if (machine_type is None or e.machine_type == machine_type)
                and (section is None or e.section == section)]
        return DatasetManifest(self.root, keep, list(self.warnings))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "machine_type", "section", "domain", "label"])
        for e in self.entries:
            w.writerow([e.path, e.machine_type, e.section, e.domain, e.label])
        return buf.getvalue()


def parse_entry(rel_path):
    """Parse ``<machine_type>/<split>/<section>_<domain>_<label>_<id>.wav``.

    Raises ValueError with a human-readable reason when the path does not
    follow the layout.
    """
    parts = Path(rel_path).parts
    if len(parts) != 3:
        raise ValueError("expected <machine_type>/<split>/<file>.wav")
    machine_type, split, name = parts
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    m = _NAME_RE.match(name)
    if m is None:
        raise ValueError("file name does not match <section>_<domain>_<label>_<id>.wav")
    if split == "train" and m["label"] != "normal":
        raise ValueError(f"training clip labelled {m['label']!r}; train split is normal-only")
    return ManifestEntry(
        path="/".join(parts),
        machine_type=machine_type,
        split=split,
        section=m["section"],
        domain=m["domain"],
        label=m["label"],
    )


def scan_manifest(root):
    """Index every ``.wav`` file under ``root``.

    Files whose path cannot be parsed are skipped and reported in
    ``manifest.warnings``; they never abort the scan.
    """
    root = Path(root)
    if not root.is_dir():
        raise EmptyDatasetError(f"{root} is not a directory")
    entries, warnings = [], []
    for p in sorted(root.rglob("*.wav")):
        rel = p.relative_to(root).as_posix()
        try:
            entries.append(parse_entry(rel))
        except ValueError as exc:
            msg = f"skipped {rel}: {exc}"
            logger.warning(msg)
            warnings.append(msg)
    if not entries:
        raise EmptyDatasetError(f"no usable .wav files under {root}")
    return DatasetManifest(root=root, entries=entries, warnings=warnings)


def load_clip(manifest, entry, seconds=DEFAULT_CLIP_SECONDS,
              sample_rate=DEFAULT_SAMPLE_RATE):
    """Read one manifest entry as a fixed-length, fully labelled Clip.

    Files whose header rate differs from ``sample_rate`` are rejected; nothing
    is resampled.
    """
    clip = read_wav(Path(manifest.root) / entry.path)
    if clip.sample_rate != sample_rate:
        raise UnsupportedCodecError(
            f"{entry.path}: sample rate {clip.sample_rate} Hz, expected {sample_rate} Hz"
        )
    clip = fit_length(clip, seconds)
    return replace(clip, id=entry.clip_id, machine_type=entry.machine_type,
                   section=entry.section, domain=entry.domain, label=entry.label)
