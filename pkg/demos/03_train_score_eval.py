"""The whole pipeline on a reduced corpus, through the library API.

Writes a small synthetic corpus to a temporary directory, trains the encoder
in instance mode, scores the test split against a per-section gallery of
training embeddings and prints the AUC / pAUC table.  The CLI does the same
with ``freqcl synth | train | score | eval``.  Takes about a minute.

    python3 demos/03_train_score_eval.py
"""

import tempfile

from freqcl import augment, nn, pipeline, synth, trainer

with tempfile.TemporaryDirectory() as root:
    manifest = synth.gen_corpus(synth.SynthConfig(train_clips=12, test_normal=8, test_anomaly=8), root)
    print(f"corpus: {len(manifest.entries)} clips under {root}")

    train_feats = pipeline.featurize(manifest, "train")
    test_feats = pipeline.featurize(manifest, "test")

stats = pipeline.fit_stats(train_feats)
enc_cfg = pipeline.encoder_config(train_feats)
train_cfg = trainer.TrainConfig(epochs=20, batch=12, queue_n=24)
result = trainer.train(
    pipeline.train_items(train_feats), stats, enc_cfg, train_cfg, augment.AugmentConfig(),
    on_epoch=lambda e: print(f"epoch {e.epoch:2d}  loss {e.mean_loss:.4f}  queue {e.queue_fill}"),
)
print(f"{result.steps} optimiser steps, {sum(a.size for a in result.params_q.values())} parameters")

gallery = pipeline.build_gallery(result.params_q, train_feats, stats)
scored, errors = pipeline.score(result.params_q, gallery, test_feats, stats, k=1)
print(pipeline.evaluate(scored).to_text(), end="")

# the checkpoint is a small self-describing container
blob = nn.tensors_to_bytes(result.params_q)
print(f"checkpoint: {len(blob)} bytes, magic {blob[:4]!r}")
