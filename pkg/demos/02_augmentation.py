"""Two views of one spectrogram, and how far apart they end up.

Builds a memory bank from a handful of training clips, then draws two views
of a held-out clip with log-mixup-exp plus random resize crop.  Prints the
mixing arithmetic on a tiny example and summary statistics of the views.

    python3 demos/02_augmentation.py
"""

import numpy as np

from freqcl import augment, features, synth

# log-mixup-exp mixes in the linear domain: log(0.5 e^0 + 0.5 e^ln2) = ln 1.5
print("mix of 0 and ln 2 at lambda 0.5:", augment.log_mixup_exp(np.array([0.0]), np.array([np.log(2)]), 0.5))

cfg = synth.SynthConfig()
fc = features.FeatureConfig()
train = [features.log_mel(synth.gen_normal(s, i, cfg), fc).values for s in range(3) for i in range(4)]
stats = augment.fit_pre_norm(train)
print(f"pre-normalisation: mean {stats.mean:.3f}, std {stats.std:.3f}")

bank = augment.MemoryBank(capacity=8)
rng = np.random.default_rng(0)
for x in train:
    augment.make_views(x, stats, bank, rng)
print(f"bank holds {len(bank)} of {bank.capacity} entries")

x = features.log_mel(synth.gen_normal(1, 99, cfg), fc).values
pair = augment.make_views(x, stats, bank, rng)
for name, v in (("view a", pair.view_a), ("view b", pair.view_b)):
    print(f"{name}: shape {v.shape}, mean {v.mean():+.1e}, std {v.std():.6f}")
corr = np.corrcoef(pair.view_a.ravel(), pair.view_b.ravel())[0, 1]
print(f"correlation between the two views: {corr:.3f}")
