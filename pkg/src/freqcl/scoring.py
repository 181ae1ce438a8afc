"""Distance-based anomaly scoring against a gallery of normal embeddings."""

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from . import augment, nn
from .errors import EmptyInputError, MissingGalleryError

logger = logging.getLogger(__name__)

LABEL_CODES = {"normal": 0, "anomaly": 1}


@dataclass
class ScoredClip:
    clip_id: str
    class_key: str
    score: float
    label: str


class Gallery(dict):
    """Mapping class key -> (n, D) array of unit-norm normal embeddings."""

    def entries(self, class_key):
        try:
            return self[class_key]
        except KeyError:
            raise MissingGalleryError(f"no gallery for class {class_key!r}") from None


def embed(params, spectrograms, stats, cfg=None, batch=64):
    """Deterministic embeddings (pre- and post-normalisation only)."""
    dtype = params["proj.weight"].dtype
    views = [augment.deterministic_view(s, stats).astype(dtype) for s in spectrograms]
    if not views:
        return np.zeros((0, params["proj.weight"].shape[0]), dtype=dtype)
    out = [nn.forward(params, np.stack(views[i:i + batch]), cfg)[0]
           for i in range(0, len(views), batch)]
    return np.concatenate(out)


def build_gallery(params, items, stats, cfg=None):
    """Embed every (class_key, spectrogram) pair of the training split."""
    items = list(items)
    if not items:
        raise EmptyInputError("gallery needs at least one training clip")
    emb = embed(params, [v for _, v in items], stats, cfg)
    gallery = Gallery()
    for (key, _), e in zip(items, emb):
        gallery.setdefault(key, []).append(e)
    for key in gallery:
        gallery[key] = np.stack(gallery[key])
    return gallery


def anomaly_score(e, entries, k=1):
    """Mean cosine distance ``1 - e.g`` from ``e`` to its ``k`` nearest gallery entries."""
    entries = np.atleast_2d(entries)
    if len(entries) == 0:
        raise EmptyInputError("empty gallery")
    if k < 1:
        raise ValueError("k must be >= 1")
    # renormalise in float64 and use |e - g|^2 / 2, which equals 1 - e.g on
    # unit vectors but is exactly 0 for identical embeddings
    g = entries.astype(np.float64)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    e = np.asarray(e, dtype=np.float64)
    e = e / np.linalg.norm(e)
    dist = 0.5 * np.sum((g - e) ** 2, axis=1)
    k = min(k, len(dist))
    nearest = np.sort(dist)[:k]
    return float(np.clip(nearest.mean(), 0.0, 2.0))


def score_split(params, gallery, items, stats, k=1, cfg=None):
    """Score test clips; ``items`` yields (clip_id, class_key, label, spectrogram).

    Returns ``(scored, errors)``.  A clip whose class has no gallery is
    recorded in ``errors`` and skipped.
    """
    items = list(items)
    emb = embed(params, [it[3] for it in items], stats, cfg)
    scored, errors = [], []
    for (clip_id, key, label, _), e in zip(items, emb):
        try:
            entries = gallery.entries(key)
        except MissingGalleryError as exc:
            logger.error("%s: %s", clip_id, exc)
            errors.append((clip_id, str(exc)))
            continue
        scored.append(ScoredClip(clip_id, key, anomaly_score(e, entries, k), label))
    return scored, errors


def scores_to_csv(scored):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["clip_id", "class_key", "score", "label"])
    for s in scored:
        w.writerow([s.clip_id, s.class_key, repr(s.score), s.label])
    return buf.getvalue()


def scores_from_csv(text):
    rows = csv.DictReader(io.StringIO(text))
    missing = {"clip_id", "class_key", "score", "label"} - set(rows.fieldnames or ())
    if missing:
        raise ValueError(f"score file lacks columns {sorted(missing)}")
    return [ScoredClip(r["clip_id"], r["class_key"], float(r["score"]), r["label"]) for r in rows]


def group_by_class(scored):
    """``{class_key: (scores, labels)}`` for clips with known labels."""
    groups = {}
    for s in scored:
        if s.label not in LABEL_CODES:
            continue
        sc, lab = groups.setdefault(s.class_key, ([], []))
        sc.append(s.score)
        lab.append(LABEL_CODES[s.label])
    return groups


def save_gallery(gallery, path):
    tensors = {}
    for key in sorted(gallery):
        for i, e in enumerate(gallery[key]):
            tensors[f"gallery/{key}/{i}"] = e
    with open(path, "wb") as fh:
        fh.write(nn.tensors_to_bytes(tensors))


def load_gallery(path):
    with open(path, "rb") as fh:
        tensors = nn.tensors_from_bytes(fh.read())
    grouped = {}
    for name, arr in tensors.items():
        if not name.startswith("gallery/"):
            raise ValueError(f"unexpected tensor {name!r} in gallery file")
        key, idx = name[len("gallery/"):].rsplit("/", 1)
        grouped.setdefault(key, {})[int(idx)] = arr
    return Gallery({k: np.stack([v[i] for i in sorted(v)]) for k, v in grouped.items()})
