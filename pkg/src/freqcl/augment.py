"""Spectrum-information augmentation for contrastive training.

Each view of an anchor spectrogram goes through

    pre-normalize -> log-mixup-exp with a memory-bank counterpart
                  -> random resize crop -> per-sample post-normalize

Mixing happens in the linear domain so that a small share of a past
recording acts as background under the anchor.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ShapeError

STD_GUARD = 1e-8


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def apply(self, x):
        return (np.asarray(x) - self.mean) / self.std


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 0.4

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"mixup alpha must lie in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class RrcConfig:
    scale_lo: float = 0.6
    scale_hi: float = 1.0
    aspect_lo: float = 0.75
    aspect_hi: float = 1.333

    def __post_init__(self):
        if not 0 < self.scale_lo <= self.scale_hi <= 1:
            raise ValueError("need 0 < scale_lo <= scale_hi <= 1")
        if not 0 < self.aspect_lo <= self.aspect_hi:
            raise ValueError("need 0 < aspect_lo <= aspect_hi")

    @property
    def is_identity(self):
        return self.scale_lo == self.scale_hi == 1 and self.aspect_lo == self.aspect_hi == 1


@dataclass(frozen=True)
class AugmentConfig:
    mixup: MixupConfig = MixupConfig()
    rrc: RrcConfig = RrcConfig()
    bank_capacity: int = 512


class MemoryBank:
    """Fixed-capacity FIFO of past (pre-normalised) inputs."""

    def __init__(self, capacity=512):
        if capacity < 1:
            raise ValueError("bank capacity must be >= 1")
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def push(self, x):
        self._items.append(np.array(x, copy=True))

    def choose(self, rng):
        return self._items[int(rng.integers(len(self._items)))]


def fit_pre_norm(spectrograms):
    """Grand mean and population std over every entry of every spectrogram."""
    arrays = [np.asarray(getattr(s, "values", s), dtype=np.float64) for s in spectrograms]
    if not arrays:
        raise EmptyInputError("cannot fit normalisation statistics on an empty collection")
    count = sum(a.size for a in arrays)
    mean = sum(a.sum() for a in arrays) / count
    var = sum(((a - mean) ** 2).sum() for a in arrays) / count
    std = float(np.sqrt(var))
    return NormStats(mean=float(mean), std=std if std >= STD_GUARD else 1.0)


def log_mixup_exp(x_i, x_k, lam):
    """Mix two log-scale arrays in the linear domain.

    Computes ``log((1 - lam) * exp(x_i) + lam * exp(x_k))`` with the usual
    max-shift, so inputs around +-700 stay finite.
    """
    x_i = np.asarray(x_i)
    x_k = np.asarray(x_k)
    if x_i.shape != x_k.shape:
        raise ShapeError(f"mixup shapes differ: {x_i.shape} vs {x_k.shape}")
    if not 0 <= lam < 1:
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    if lam == 0:
        return x_i.copy()
    hi = np.maximum(x_i, x_k)
    mixed = (1.0 - lam) * np.exp(x_i - hi) + lam * np.exp(x_k - hi)
    out = hi + np.log(mixed)
    # rounding can push the result a hair outside [min, max]
    return np.clip(out, np.minimum(x_i, x_k), hi)


def draw_lambda(rng, cfg=MixupConfig()):
    return float(rng.uniform(0.0, cfg.alpha))


def bank_mix(x, bank, rng, cfg=MixupConfig()):
    """Mix ``x`` with a random bank element, then push the unmixed ``x``."""
    out = _mix_from_bank(x, bank, rng, cfg)
    bank.push(x)
    return out


def _mix_from_bank(x, bank, rng, cfg):
    if len(bank) == 0:
        return np.array(x, copy=True)
    x_k = bank.choose(rng)
    return log_mixup_exp(x, x_k, draw_lambda(rng, cfg))


def _resize_bilinear(a, rows, cols):
    """Corner-aligned bilinear resize; outputs are convex combinations of inputs."""
    h, w = a.shape
    if (h, w) == (rows, cols):
        return a.copy()

    def axis_weights(n_in, n_out):
        if n_in == 1 or n_out == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis_weights(h, rows)
    c0, c1, fc = axis_weights(w, cols)
    top = a[r0][:, c0] * (1 - fc) + a[r0][:, c1] * fc
    bot = a[r1][:, c0] * (1 - fc) + a[r1][:, c1] * fc
    out = top * (1 - fr)[:, None] + bot * fr[:, None]
    return np.clip(out, a.min(), a.max()).astype(a.dtype, copy=False)


def random_resize_crop(x, rng, cfg=RrcConfig()):
    """Crop a random frequency x time patch and stretch it back to full size.

    Height scales with ``sqrt(scale * aspect)`` and width with
    ``sqrt(scale / aspect)``; aspect is drawn log-uniformly.
    """
    x = np.asarray(x)
    m, t = x.shape
    if m < 2 or t < 2:
        raise ShapeError(f"random resize crop needs at least 2x2, got {x.shape}")
    s = rng.uniform(cfg.scale_lo, cfg.scale_hi)
    a = float(np.exp(rng.uniform(np.log(cfg.aspect_lo), np.log(cfg.aspect_hi))))
    h = int(np.clip(round(m * np.sqrt(s * a)), 1, m))
    w = int(np.clip(round(t * np.sqrt(s / a)), 1, t))
    i = int(rng.integers(m - h + 1))
    j = int(rng.integers(t - w + 1))
    return _resize_bilinear(x[i:i + h, j:j + w], m, t)


def post_normalize(x):
    x = np.asarray(x)
    if x.size < 2:
        raise ShapeError("post-normalisation needs at least two entries")
    centered = x - x.mean()
    std = np.sqrt(np.mean(centered ** 2))
    if std < STD_GUARD:
        return np.zeros_like(x)
    return centered / std


def augment_view(x_norm, bank, rng, cfg=AugmentConfig()):
    """One stochastic view of an already pre-normalised spectrogram.

    Does not touch the bank contents; callers push the anchor afterwards.
    """
    y = _mix_from_bank(x_norm, bank, rng, cfg.mixup)
    y = random_resize_crop(y, rng, cfg.rrc)
    return post_normalize(y)


def deterministic_view(x, stats):
    """Inference path: pre-normalise and post-normalise, nothing random."""
    return post_normalize(stats.apply(np.asarray(getattr(x, "values", x))))


@dataclass
class ViewPair:
    view_a: np.ndarray
    view_b: np.ndarray


def make_views(x, stats, bank, rng, cfg=AugmentConfig()):
    """Two independently augmented views of one raw log-mel spectrogram.

    ``rng`` is either a Generator (two child streams are spawned from it) or a
    pair of Generators, one per view.  Both views draw their mixing
    counterpart from the bank as it was before this call; the pre-normalised
    anchor is pushed once afterwards.
    """
    x_norm = stats.apply(np.asarray(getattr(x, "values", x), dtype=np.float64))
    if isinstance(rng, np.random.Generator):
        rng_a, rng_b = rng.spawn(2)
    else:
        rng_a, rng_b = rng
    pair = ViewPair(augment_view(x_norm, bank, rng_a, cfg),
                    augment_view(x_norm, bank, rng_b, cfg))
    bank.push(x_norm)
    return pair
