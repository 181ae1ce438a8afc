"""``freqcl`` command-line entry point.

Subcommands: ``synth``, ``train``, ``score``, ``eval``, ``export``, ``config``.

Exit codes: 0 success, 2 usage / configuration / I/O error, 3 data error
(unreadable corpus, missing or malformed checkpoint, undefined metric),
4 numeric abort during training.
"""

import argparse
import contextlib
import logging
import re
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics, nn, pipeline, scoring, trainer
from .audio_io import fit_length, read_wav, scan_manifest
from .config import keys_help, load_run_config
from .errors import (CheckpointFormatError, ConfigError, EmptyDatasetError, EmptyInputError,
                     FreqclError, NumericError, ShapeError, UndefinedMetricError,
                     UnsupportedCodecError, WavFormatError)
from .features import log_mel
from .metrics import roc_points
from .synth import gen_corpus

logger = logging.getLogger("freqcl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
EXPORT_FORMATS = ("pgm", "csv")

_DATA_ERRORS = (EmptyDatasetError, EmptyInputError, WavFormatError, UnsupportedCodecError,
                CheckpointFormatError, ShapeError, UndefinedMetricError)


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# -- helpers -----------------------------------------------------------------------

def _run_config(args, extra=()):
    overrides = []
    for item in args.set or ():
        name, sep, value = item.partition("=")
        if not sep:
            raise CliError(EXIT_USAGE, f"--set expects KEY=VALUE, got {item!r}")
        overrides.append((name, value))
    if args.seed is not None:
        overrides.append(("seed", str(args.seed)))
    overrides.extend((k, str(v)) for k, v in extra if v is not None)
    return load_run_config(args.config, overrides)


def _write_text(path, text):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot write {path}: {exc.strerror or exc}") from None


def _write_bytes(path, data):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot write {path}: {exc.strerror or exc}") from None


def _manifest(args):
    manifest = scan_manifest(args.data)
    if args.machine_type or args.section:
        manifest = manifest.filter(args.machine_type, args.section)
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return manifest


def _safe_name(class_key):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", class_key)


def spectrogram_pgm(values):
    """8-bit binary PGM, one column per frame, lowest mel band on the bottom row."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo) * 255.0
    img = np.round(scaled[::-1]).astype(np.uint8)
    rows, cols = img.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + img.tobytes()


def spectrogram_csv(values):
    return "".join(",".join(repr(float(x)) for x in row) + "\n" for row in values)


# -- commands ------------------------------------------------------------------------

def cmd_synth(args):
    cfg = _run_config(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = gen_corpus(cfg.synth_config(), out)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot write corpus to {out}: {exc.strerror or exc}") from None
    print(out / "manifest.csv")
    logger.info("%d clips written", len(manifest.entries))
    return EXIT_OK


def cmd_train(args):
    cfg = _run_config(args, [("mode", args.mode), ("epochs", args.epochs)])
    feat_cfg = cfg.feature_config()
    manifest = _manifest(args)
    feats = pipeline.featurize(manifest, "train", feat_cfg, cfg["clip_seconds"])
    stats = pipeline.fit_stats(feats)
    spec_shape = feats[0].spec.shape
    enc_cfg = cfg.encoder_config(*spec_shape)
    train_cfg = cfg.train_config()

    def progress(entry):
        logger.info("epoch %d/%d  loss %.4f", entry.epoch, train_cfg.epochs, entry.mean_loss)

    result = trainer.train(pipeline.train_items(feats), stats, enc_cfg, train_cfg,
                           cfg.augment_config(), on_epoch=progress)
    ckpt = Path(args.out_checkpoint)
    _write_bytes(ckpt, nn.tensors_to_bytes(result.params_q))
    _write_text(ckpt.parent / "train_log.csv", trainer.log_csv(result.log))
    first, last = result.log[0].mean_loss, result.log[-1].mean_loss
    print(f"wrote {ckpt} ({result.steps} steps; loss {first:.4f} -> {last:.4f})")
    return EXIT_OK


def cmd_score(args):
    cfg = _run_config(args, [("k", args.k)])
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise CliError(EXIT_DATA, f"checkpoint not found: {ckpt}")
    params = nn.load_checkpoint(ckpt)
    feat_cfg = cfg.feature_config()
    manifest = _manifest(args)
    train_feats = pipeline.featurize(manifest, "train", feat_cfg, cfg["clip_seconds"])
    test_feats = pipeline.featurize(manifest, "test", feat_cfg, cfg["clip_seconds"])
    enc_cfg = cfg.encoder_config(*train_feats[0].spec.shape)
    nn.check_params(params, enc_cfg)
    stats = pipeline.fit_stats(train_feats)
    gallery = scoring.build_gallery(
        params, [(f.entry.class_key, f.spec) for f in train_feats], stats, enc_cfg)
    if args.gallery_cache:
        scoring.save_gallery(gallery, args.gallery_cache)
    items = [(f.entry.clip_id, f.entry.class_key, f.entry.label, f.spec) for f in test_feats]
    scored, errors = scoring.score_split(params, gallery, items, stats, k=cfg["k"], cfg=enc_cfg)
    for clip_id, why in errors:
        print(f"error: {clip_id}: {why}", file=sys.stderr)
    _write_text(args.out, scoring.scores_to_csv(scored))
    print(f"wrote {args.out} ({len(scored)} clips, {len(errors)} errors)")
    return EXIT_OK


def _read_scores(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return scoring.scores_from_csv(text)
    except (ValueError, KeyError) as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}") from None


def cmd_eval(args):
    extra = [("p", args.p)]
    if args.mcclish:
        extra.append(("mcclish", "true"))
    cfg = _run_config(args, extra)
    scored = _read_scores(args.scores)
    groups = scoring.group_by_class(scored)
    rep = metrics.report(groups, cfg.metric_config())
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.scores).parent
    _write_text(out_dir / "report.csv", rep.to_csv())
    _write_text(out_dir / "report.txt", rep.to_text())
    for row in rep.rows:
        curve = roc_points(*groups[row.name])
        _write_text(out_dir / f"roc_{_safe_name(row.name)}.csv", curve.to_csv())
    sys.stdout.write(rep.to_text())
    return EXIT_OK


def cmd_export(args):
    cfg = _run_config(args)
    if args.clip:
        feat_cfg = cfg.feature_config()
        clip = read_wav(args.clip)
        if clip.sample_rate != feat_cfg.sample_rate:
            raise UnsupportedCodecError(
                f"{args.clip}: sample rate {clip.sample_rate} Hz, expected {feat_cfg.sample_rate} Hz")
        values = log_mel(fit_length(clip, cfg["clip_seconds"]), feat_cfg).values
        if args.format == "pgm":
            _write_bytes(args.out, spectrogram_pgm(values))
        else:
            _write_text(args.out, spectrogram_csv(values))
    else:
        if args.format != "csv":
            raise CliError(EXIT_USAGE, "scores export supports --format csv only (ROC points)")
        scored = _read_scores(args.scores)
        if args.class_key:
            scored = [s for s in scored if s.class_key == args.class_key]
        scores_labels = scoring.group_by_class(
            [scoring.ScoredClip(s.clip_id, "all", s.score, s.label) for s in scored])
        if "all" not in scores_labels:
            raise CliError(EXIT_DATA, "no labelled clips to build a ROC curve from")
        _write_text(args.out, roc_points(*scores_labels["all"]).to_csv())
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_config(args):
    sys.stdout.write(_run_config(args).dump())
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key = value settings file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="seed; beats the config file and $FREQCL_SEED")
    common.add_argument("--threads", type=int, metavar="N",
                        help="cap BLAS/OpenMP threads (1 guarantees byte-identical reruns)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", required=True, metavar="DIR", help="corpus root")
    data.add_argument("--machine-type", help="restrict to one machine type")
    data.add_argument("--section", help="restrict to one section (per-ID model)")

    parser = argparse.ArgumentParser(
        prog="freqcl", description="Contrastive anomalous-sound detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    kw = dict(parents=[common], epilog=keys_help(),
              formatter_class=argparse.RawDescriptionHelpFormatter)

    p = sub.add_parser("synth", help="write a synthetic corpus", **kw)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an encoder", **{**kw, "parents": [common, data]})
    p.add_argument("--out-checkpoint", required=True, metavar="FILE")
    p.add_argument("--mode", choices=trainer.MODES)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score test clips", **{**kw, "parents": [common, data]})
    p.add_argument("--checkpoint", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="CSV")
    p.add_argument("--k", type=int)
    p.add_argument("--gallery-cache", metavar="FILE", help="also save the gallery here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUC / pAUC report from a score CSV", **kw)
    p.add_argument("--scores", required=True, metavar="CSV")
    p.add_argument("--p", type=float)
    p.add_argument("--mcclish", action="store_true")
    p.add_argument("--out-dir", metavar="DIR", help="defaults to the score file's directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="spectrogram image/CSV or ROC points", **kw)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--clip", metavar="WAV")
    src.add_argument("--scores", metavar="CSV")
    p.add_argument("--format", required=True, choices=EXPORT_FORMATS)
    p.add_argument("--out", required=True)
    p.add_argument("--class", dest="class_key", help="restrict ROC export to one class key")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("config", help="print the effective configuration", **kw)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits:
            return args.func(args)
    except CliError as exc:
        print(f"freqcl {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"freqcl {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"freqcl {args.command}: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"freqcl {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FreqclError as exc:
        print(f"freqcl {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"freqcl {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
