"""Run configuration: flat ``key = value`` settings shared by every command.

Precedence, lowest first::

    built-in defaults < FREQCL_SEED (seed only) < config file < command-line flags

A config file holds one ``key = value`` per line; ``#`` starts a comment.
Unknown keys and unparseable values raise :class:`ConfigError`, and
:meth:`RunConfig.validate` builds every sub-config so bad combinations are
caught before any work starts.
"""

import os
from dataclasses import dataclass
from pathlib import Path

from . import augment, metrics, nn, synth, trainer
from .audio_io import DEFAULT_CLIP_SECONDS
from .errors import ConfigError
from .features import FeatureConfig, n_frames

SEED_ENV = "FREQCL_SEED"


# -- value codecs --------------------------------------------------------------

def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _fmt_bool(v):
    return "true" if v else "false"


def _parse_opt_float(text):
    return None if text.strip().lower() in ("none", "") else float(text)


def _fmt_opt_float(v):
    return "none" if v is None else repr(float(v))


def _parse_ints(text):
    vals = tuple(int(t) for t in text.split(","))
    if not vals:
        raise ValueError("empty list")
    return vals


def _fmt_ints(v):
    return ",".join(str(int(x)) for x in v)


def _parse_pair(cast):
    def parse(text):
        lo, sep, hi = text.strip().partition(":")
        if not sep:
            raise ValueError(f"expected lo:hi, got {text!r}")
        return cast(lo), cast(hi)
    return parse


def _fmt_pair(v):
    return f"{v[0]!r}:{v[1]!r}"


def _parse_ranges(text):
    return tuple(_parse_pair(float)(part) for part in text.split(","))


def _fmt_ranges(v):
    return ",".join(_fmt_pair((float(a), float(b))) for a, b in v)


def _choice(*allowed):
    def parse(text):
        text = text.strip()
        if text not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}; got {text!r}")
        return text
    return parse


def _float(text):
    return float(text)


@dataclass(frozen=True)
class Key:
    name: str
    default: object
    parse: object
    fmt: object = repr
    help: str = ""


_SD = synth.SynthConfig()
_FC = FeatureConfig()
_TC = trainer.TrainConfig()
_RRC = augment.RrcConfig()
_EC = nn.EncoderConfig()

KEYS = [
    Key("seed", 0, int, str, "master seed (training, synthesis)"),
    # features
    Key("sample_rate", _FC.sample_rate, int, str, "expected WAV sample rate, Hz"),
    Key("clip_seconds", DEFAULT_CLIP_SECONDS, _float, repr, "clip length after pad/trim"),
    Key("frame_size", _FC.frame_size, int, str, "STFT window W"),
    Key("hop", _FC.hop, int, str, "STFT hop H"),
    Key("n_mels", _FC.n_mels, int, str, "mel bands M"),
    Key("fmin", _FC.fmin, _float, repr, "lowest mel edge, Hz"),
    Key("fmax", _FC.fmax, _parse_opt_float, _fmt_opt_float, "highest mel edge, Hz (none = Nyquist)"),
    Key("log_floor", _FC.log_floor, _float, repr, "power floor before the log"),
    # augmentation
    Key("mixup.alpha", augment.MixupConfig().alpha, _float, repr, "upper bound of the mixing ratio"),
    Key("bank.capacity", augment.AugmentConfig().bank_capacity, int, str, "memory bank size"),
    Key("rrc.scale_lo", _RRC.scale_lo, _float, repr, "crop area fraction, lower"),
    Key("rrc.scale_hi", _RRC.scale_hi, _float, repr, "crop area fraction, upper"),
    Key("rrc.aspect_lo", _RRC.aspect_lo, _float, repr, "crop aspect ratio, lower"),
    Key("rrc.aspect_hi", _RRC.aspect_hi, _float, repr, "crop aspect ratio, upper"),
    # encoder
    Key("encoder.channels", _EC.channels, _parse_ints, _fmt_ints, "conv block widths, comma separated"),
    Key("encoder.embed_dim", _EC.embed_dim, int, str, "embedding size D"),
    Key("encoder.pooling", _EC.pooling, _choice(*nn.POOLINGS), str, "|".join(nn.POOLINGS)),
    # training
    Key("mode", _TC.mode, _choice(*trainer.MODES), str, "|".join(trainer.MODES)),
    Key("m", _TC.momentum, _float, repr, "key encoder momentum"),
    Key("tau", _TC.temperature, _float, repr, "InfoNCE temperature"),
    Key("queue_n", _TC.queue_n, int, str, "negative queue length"),
    Key("lr", _TC.lr, _float, repr, "Adam learning rate"),
    Key("batch", _TC.batch, int, str, "batch size"),
    Key("epochs", _TC.epochs, int, str, "training epochs"),
    # scoring / metrics
    Key("k", 1, int, str, "nearest neighbours averaged per score"),
    Key("p", metrics.MetricConfig().p, _float, repr, "pAUC false-positive bound"),
    Key("mcclish", False, _parse_bool, _fmt_bool, "McClish-standardise pAUC"),
    # synthetic corpus
    Key("synth.machine_type", _SD.machine_type, str, str, "machine type directory name"),
    Key("synth.f0_ranges", _SD.f0_ranges, _parse_ranges, _fmt_ranges, "per-section f0 lo:hi, comma separated"),
    Key("synth.train_clips", _SD.train_clips, int, str, "train clips per section"),
    Key("synth.test_normal", _SD.test_normal, int, str, "normal test clips per section"),
    Key("synth.test_anomaly", _SD.test_anomaly, int, str, "anomalous test clips per section"),
    Key("synth.harmonics", _SD.harmonics, int, str, "harmonics per clip"),
    Key("synth.amp_jitter", _SD.amp_jitter, _float, repr, "per-harmonic amplitude jitter"),
    Key("synth.detune", _SD.detune, _float, repr, "per-harmonic relative detune"),
    Key("synth.noise_level", _SD.noise_level, _float, repr, "low-passed noise RMS relative to tones"),
    Key("synth.noise_cutoff", _SD.noise_cutoff, _float, repr, "noise low-pass cutoff, Hz"),
    Key("synth.floor_db", _SD.floor_db, _float, repr, "broadband floor, dB re clip RMS"),
    Key("synth.domains", _SD.domains, int, str, "1 (source only) or 2 (source + target)"),
    Key("synth.target_noise_gain", _SD.target_noise_gain, _float, repr, "target-domain noise gain"),
    Key("synth.burst_band", _SD.burst_band, _parse_pair(float), _fmt_pair, "anomaly band lo:hi, Hz"),
    Key("synth.bursts", _SD.bursts, _parse_pair(int), lambda v: f"{v[0]}:{v[1]}", "bursts per anomaly lo:hi"),
    Key("synth.burst_ms", _SD.burst_ms, _parse_pair(float), _fmt_pair, "burst length lo:hi, ms"),
    Key("synth.burst_level", _SD.burst_level, _float, repr, "burst amplitude re clip peak"),
]
KEY_INDEX = {k.name: k for k in KEYS}


def keys_help():
    """One line per recognised key, for ``--help`` epilogues."""
    width = max(len(k.name) for k in KEYS)
    lines = ["recognised config keys (file 'key = value' or --set key=value):"]
    for k in KEYS:
        lines.append(f"  {k.name:<{width}}  {k.fmt(k.default):<14} {k.help}")
    lines.append(f"seed precedence: defaults < ${SEED_ENV} < config file < flags")
    return "\n".join(lines)


# -- RunConfig -------------------------------------------------------------------

class RunConfig:
    """Merged settings; attribute-free, use ``cfg["key"]``."""

    def __init__(self, values=None):
        self._values = {k.name: k.default for k in KEYS}
        if values:
            for name, v in values.items():
                self[name] = v

    def __getitem__(self, name):
        return self._values[name]

    def __setitem__(self, name, value):
        if name not in KEY_INDEX:
            raise ConfigError(f"unknown config key {name!r}")
        self._values[name] = value

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._values == other._values

    def as_dict(self):
        return dict(self._values)

    def set_text(self, name, text, origin="flag"):
        """Parse ``text`` with the key's codec and store it."""
        name = name.strip()
        if name not in KEY_INDEX:
            raise ConfigError(f"{origin}: unknown config key {name!r}")
        try:
            self._values[name] = KEY_INDEX[name].parse(text.strip())
        except ValueError as exc:
            raise ConfigError(f"{origin}: bad value for {name}: {exc}") from None

    def update_text(self, text, origin="<config>"):
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            name, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
            self.set_text(name, value, f"{origin}:{lineno}")
        return self

    def dump(self):
        return "".join(f"{k.name} = {k.fmt(self._values[k.name])}\n" for k in KEYS)

    # sub-configs
    def feature_config(self):
        return FeatureConfig(self["frame_size"], self["hop"], self["n_mels"], self["fmin"],
                             self["fmax"], self["log_floor"], self["sample_rate"])

    def augment_config(self):
        return augment.AugmentConfig(
            augment.MixupConfig(self["mixup.alpha"]),
            augment.RrcConfig(self["rrc.scale_lo"], self["rrc.scale_hi"],
                              self["rrc.aspect_lo"], self["rrc.aspect_hi"]),
            self["bank.capacity"])

    def train_config(self):
        return trainer.TrainConfig(self["m"], self["tau"], self["queue_n"], self["lr"],
                                   self["batch"], self["epochs"], self["mode"], self["seed"])

    def encoder_config(self, n_mels, n_frames):
        return nn.EncoderConfig(n_mels, n_frames, self["encoder.channels"],
                                self["encoder.embed_dim"], self["encoder.pooling"])

    def metric_config(self):
        return metrics.MetricConfig(self["p"], self["mcclish"])

    def synth_config(self):
        kw = {name[len("synth."):]: v for name, v in self._values.items() if name.startswith("synth.")}
        return synth.SynthConfig(sample_rate=self["sample_rate"], seconds=self["clip_seconds"],
                                 seed=self["seed"], **kw)

    def validate(self):
        """Build every sub-config; raise ConfigError on the first problem."""
        try:
            fc = self.feature_config().validate()
            self.augment_config()
            self.train_config()
            self.encoder_config(fc.n_mels, n_frames(int(round(self["clip_seconds"] * fc.sample_rate)), fc.hop))
            self.metric_config()
            self.synth_config().validate()
            if self["k"] < 1:
                raise ValueError("k must be >= 1")
            if self["clip_seconds"] <= 0:
                raise ValueError("clip_seconds must be positive")
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return self


def parse_config(text, origin="<config>"):
    return RunConfig().update_text(text, origin)


def load_run_config(path=None, overrides=(), env=None):
    """Merge defaults, ``$FREQCL_SEED``, an optional file and ``overrides``.

    ``overrides`` is a sequence of ``(key, text)`` pairs applied last, in
    order.  The result is validated.
    """
    env = os.environ if env is None else env
    cfg = RunConfig()
    if env.get(SEED_ENV, "").strip():
        cfg.set_text("seed", env[SEED_ENV], f"${SEED_ENV}")
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        cfg.update_text(text, str(path))
    for name, text in overrides:
        cfg.set_text(name, str(text))
    return cfg.validate()
