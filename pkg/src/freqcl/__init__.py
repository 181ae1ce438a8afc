"""Self-supervised contrastive learning for anomalous machine-sound detection.

Modules
-------
audio_io   WAV I/O and dataset manifests
features   log-mel spectrograms
augment    log-mixup-exp, random resize crop, normalisation
nn         numpy convolutional encoder with manual backward pass
trainer    momentum-contrast training (InfoNCE, negative queue, Adam)
scoring    gallery construction and nearest-neighbour anomaly scores
metrics    AUC, partial AUC, ROC export
synth      deterministic synthetic machine-sound corpus
cli        the ``freqcl`` command
"""

__version__ = "0.1.0"

from . import audio_io, augment, features, metrics, nn, scoring, synth, trainer  # noqa: F401
from .errors import FreqclError  # noqa: F401
