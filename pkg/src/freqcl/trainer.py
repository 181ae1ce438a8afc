"""Momentum-encoder contrastive training.

The query encoder is trained with Adam on an InfoNCE loss whose negatives
come from a FIFO queue of past key embeddings.  The key encoder never sees a
gradient; after every optimiser step it moves towards the query encoder as
an exponential moving average.
"""

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import augment, nn
from .errors import EmptyInputError, NumericError, ShapeError

logger = logging.getLogger(__name__)

MODES = ("instance", "class_conditional")


@dataclass(frozen=True)
class TrainConfig:
    momentum: float = 0.99
    temperature: float = 0.07
    queue_n: int = 1024
    lr: float = 0.0009
    batch: int = 32
    epochs: int = 150
    mode: str = "instance"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.queue_n < 1 or self.batch < 1 or self.epochs < 1:
            raise ValueError("queue_n, batch and epochs must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


class NegativeQueue:
    """FIFO of unit-norm key embeddings used as negatives.

    Each key remembers the class key of the clip it came from so that
    class-conditional training can leave same-class keys out.  Keys are
    stored as encoded and never refreshed.
    """

    def __init__(self, capacity, dim):
        self.capacity = capacity
        self.dim = dim
        self._keys = deque(maxlen=capacity)
        self._classes = deque(maxlen=capacity)

    def __len__(self):
        return len(self._keys)

    def enqueue(self, keys, classes=None):
        keys = np.atleast_2d(keys)
        if keys.shape[1] != self.dim:
            raise ShapeError(f"key dimension {keys.shape[1]} != queue dimension {self.dim}")
        if classes is None:
            classes = [None] * len(keys)
        for k, c in zip(keys, classes):
            self._keys.append(np.array(k, copy=True))
            self._classes.append(c)

    def keys(self):
        if not self._keys:
            return np.zeros((0, self.dim))
        return np.stack(self._keys)

    def classes(self):
        return list(self._classes)


def info_nce(q, k_pos, negatives, tau):
    """InfoNCE loss for one query and its gradient with respect to ``q``.

    ``negatives`` is an (n, D) array (n may be 0).  The denominator runs over
    the positive plus every negative.
    """
    q = np.asarray(q)
    keys = np.vstack([np.asarray(k_pos)[None], np.asarray(negatives).reshape(-1, q.shape[0])])
    return info_nce_logits(keys @ q / tau, keys / tau)


def info_nce_logits(logits, dlogits_dq=None):
    """Loss from raw logits (positive first); optional chain rule to ``q``."""
    logits = np.asarray(logits)
    top = logits.max()
    lse = top + np.log(np.sum(np.exp(logits - top)))
    loss = float(lse - logits[0])
    if dlogits_dq is None:
        return loss
    p = np.exp(logits - lse)
    p[0] -= 1.0
    return loss, p @ dlogits_dq


def momentum_update(theta_k, theta_q, m):
    """In-place exponential moving average ``theta_k <- m theta_k + (1 - m) theta_q``."""
    for name, k in theta_k.items():
        q = theta_q[name]
        if q.shape != k.shape:
            raise ShapeError(f"momentum update: {name!r} shapes {k.shape} vs {q.shape}")
        k *= k.dtype.type(m)
        k += k.dtype.type(1 - m) * q
    return theta_k


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params):
        return cls(nn.zeros_like(params), nn.zeros_like(params), 0)


def adam_step(params, grads, state, lr=0.0009, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(g))[0]
            raise NumericError(f"non-finite gradient in {name!r} at index {tuple(bad)}")
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
    return params, state


# -- pair sampling ------------------------------------------------------------

@dataclass
class TrainItem:
    """A training clip's raw log-mel values plus grouping metadata."""

    values: np.ndarray
    class_key: str
    domain: str = "na"
    clip_id: str = ""


@dataclass
class PairBatch:
    anchors: list
    positives: list
    classes: list
    fallback_pairs: int = 0


def _positive_index(items, i, rng, by_class):
    """Index of a positive partner for item ``i`` plus whether we fell back."""
    same = [j for j in by_class[items[i].class_key] if j != i] or [i]
    other_domain = [j for j in same if items[j].domain != items[i].domain]
    if other_domain:
        return other_domain[int(rng.integers(len(other_domain)))], False
    return same[int(rng.integers(len(same)))], True


def sample_pairs(items, indices, mode, stats, bank, rng, cfg=augment.AugmentConfig()):
    """Build anchor/positive views for the clips at ``indices``.

    Instance mode: both views come from the same clip.  Class-conditional
    mode: the positive is another clip of the same class key, from a
    different domain whenever the class has one.
    """
    if len(items) == 0 or len(indices) == 0:
        raise EmptyInputError("cannot sample pairs from an empty training set")
    by_class = {}
    for j, it in enumerate(items):
        by_class.setdefault(it.class_key, []).append(j)

    batch = PairBatch([], [], [])
    to_push = []
    for i in indices:
        x_norm = stats.apply(items[i].values)
        if mode == "instance":
            y_norm = x_norm
        else:
            j, fell_back = _positive_index(items, i, rng, by_class)
            batch.fallback_pairs += int(fell_back)
            y_norm = stats.apply(items[j].values)
        rng_a, rng_b = rng.spawn(2)
        batch.anchors.append(augment.augment_view(x_norm, bank, rng_a, cfg))
        batch.positives.append(augment.augment_view(y_norm, bank, rng_b, cfg))
        batch.classes.append(items[i].class_key)
        to_push.append(x_norm)
    for x in to_push:
        bank.push(x)
    return batch


# -- training loop ---------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    queue_fill: int
    fallback_pairs: int


@dataclass
class TrainResult:
    params_q: dict
    params_k: dict
    log: list = field(default_factory=list)
    queue: NegativeQueue = None
    steps: int = 0


def batch_loss(q, keys, queue_keys, tau, classes=None, queue_classes=None):
    """Mean InfoNCE over a batch and its gradient with respect to ``q``.

    Without ``classes`` every queue key is a negative (instance mode).  With
    ``classes`` (class-conditional mode) the negatives of query ``i`` are the
    queue keys and in-batch keys whose class differs from ``classes[i]``.
    """
    n_b = len(q)
    grads = np.zeros_like(q)
    total = 0.0
    if classes is not None:
        queue_classes = np.asarray(queue_classes, dtype=object)
        batch_classes = np.asarray(classes, dtype=object)
    for i in range(n_b):
        negs = queue_keys
        if classes is not None:
            negs = np.vstack([queue_keys[queue_classes != classes[i]],
                              keys[batch_classes != classes[i]]])
        cand = np.vstack([keys[i][None], negs])
        loss, g = info_nce_logits(cand @ q[i] / tau, cand / tau)
        total += loss
        grads[i] = g / n_b
    return total / n_b, grads


def train(items, stats, enc_cfg, train_cfg=TrainConfig(), aug_cfg=augment.AugmentConfig(),
          params=None, dtype=np.float32, on_epoch=None, on_step=None):
    """Run momentum-contrast training over ``items`` (a list of TrainItem).

    Returns a :class:`TrainResult`; ``result.log`` has one EpochLog per epoch.
    Batches seen while the queue is still empty only encode and enqueue
    keys.  ``on_step(step, theta_q, theta_k)`` is called after every
    optimiser step (the arrays are live; copy them to keep history).
    """
    if not items:
        raise EmptyInputError("training set is empty")
    rng = np.random.default_rng(train_cfg.seed)
    theta_q = params if params is not None else nn.init_params(enc_cfg, seed=train_cfg.seed, dtype=dtype)
    theta_k = nn.copy_params(theta_q)
    adam = AdamState.zeros(theta_q)
    queue = NegativeQueue(train_cfg.queue_n, enc_cfg.embed_dim)
    bank = augment.MemoryBank(aug_cfg.bank_capacity)
    conditional = train_cfg.mode == "class_conditional"
    result = TrainResult(theta_q, theta_k, queue=queue)

    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(items))
        losses, fallbacks = [], 0
        for b, start in enumerate(range(0, len(order), train_cfg.batch)):
            idx = order[start:start + train_cfg.batch]
            pairs = sample_pairs(items, idx, train_cfg.mode, stats, bank, rng, aug_cfg)
            fallbacks += pairs.fallback_pairs
            keys, _ = nn.forward(theta_k, np.stack(pairs.positives), enc_cfg)

            if len(queue) > 0:
                q, cache = nn.forward(theta_q, np.stack(pairs.anchors), enc_cfg)
                loss, grad_q = batch_loss(
                    q, keys, queue.keys().astype(q.dtype), train_cfg.temperature,
                    classes=pairs.classes if conditional else None,
                    queue_classes=queue.classes() if conditional else None)
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
                grads = nn.backward_cached(theta_q, cache, grad_q)
                adam_step(theta_q, grads, adam, lr=train_cfg.lr)
                momentum_update(theta_k, theta_q, train_cfg.momentum)
                losses.append(loss)
                result.steps += 1
                if on_step is not None:
                    on_step(result.steps, theta_q, theta_k)
            queue.enqueue(keys, pairs.classes)

        mean_loss = float(np.mean(losses)) if losses else float("nan")
        entry = EpochLog(epoch, mean_loss, len(queue), fallbacks)
        result.log.append(entry)
        logger.info("epoch %d loss %.5f queue %d fallback %d", epoch, mean_loss, len(queue), fallbacks)
        if on_epoch is not None:
            on_epoch(entry)
    return result


def log_csv(log):
    lines = ["epoch,mean_loss,queue_fill,fallback_pairs"]
    lines += [f"{e.epoch},{e.mean_loss!r},{e.queue_fill},{e.fallback_pairs}" for e in log]
    return "\n".join(lines) + "\n"
