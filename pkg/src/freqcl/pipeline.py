"""Glue from a dataset manifest to features, training, scores and reports."""

from dataclasses import dataclass

import numpy as np

from . import augment, metrics, nn, scoring, trainer
from .audio_io import DEFAULT_CLIP_SECONDS, load_clip
from .errors import EmptyDatasetError
from .features import FeatureConfig, log_mel


@dataclass
class FeaturizedClip:
    entry: object  # ManifestEntry
    spec: np.ndarray


def featurize(manifest, split, feat_cfg=FeatureConfig(), seconds=DEFAULT_CLIP_SECONDS):
    entries = manifest.split(split)
    if not entries:
        raise EmptyDatasetError(f"manifest has no {split!r} clips")
    out = []
    for e in entries:
        clip = load_clip(manifest, e, seconds=seconds, sample_rate=feat_cfg.sample_rate)
        out.append(FeaturizedClip(e, log_mel(clip, feat_cfg).values))
    return out


def train_items(featurized, dtype=np.float32):
    return [trainer.TrainItem(values=f.spec.astype(dtype), class_key=f.entry.class_key,
                              domain=f.entry.domain, clip_id=f.entry.clip_id)
            for f in featurized]


def fit_stats(featurized):
    return augment.fit_pre_norm([f.spec for f in featurized])


def encoder_config(featurized, channels=(16, 32, 64), embed_dim=64, pooling="time_meanmax"):
    n_mels, n_frames = featurized[0].spec.shape
    return nn.EncoderConfig(n_mels, n_frames, tuple(channels), embed_dim, pooling)


def build_gallery(params, train_feats, stats):
    return scoring.build_gallery(params, [(f.entry.class_key, f.spec) for f in train_feats], stats)


def score(params, gallery, test_feats, stats, k=1):
    items = [(f.entry.clip_id, f.entry.class_key, f.entry.label, f.spec) for f in test_feats]
    return scoring.score_split(params, gallery, items, stats, k=k)


def evaluate(scored, cfg=metrics.MetricConfig()):
    return metrics.report(scoring.group_by_class(scored), cfg)
