import csv
import io
import os

import numpy as np
import pytest

from conftest import small_cli_args
from freqcl import cli, nn, synth
from freqcl.audio_io import write_wav
from freqcl.config import KEYS, SEED_ENV, ConfigError, load_run_config, parse_config


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """synth -> train -> score -> eval on a tiny corpus, shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    data, run_dir = root / "data", root / "run"
    small = small_cli_args()
    assert cli.main(["synth", "--out", str(data), *small]) == 0
    assert cli.main(["train", "--data", str(data), "--out-checkpoint", str(run_dir / "model.fqcl"), *small]) == 0
    assert cli.main(["score", "--data", str(data), "--checkpoint", str(run_dir / "model.fqcl"),
                     "--out", str(run_dir / "scores.csv"), *small]) == 0
    assert cli.main(["eval", "--scores", str(run_dir / "scores.csv")]) == 0
    return data, run_dir


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = load_run_config(env={})
        assert parse_config(cfg.dump()) == cfg

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# header\n\nepochs = 7  # trailing\nmode=class_conditional\n")
        assert cfg["epochs"] == 7 and cfg["mode"] == "class_conditional"

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key 'epoch'"):
            parse_config("epoch = 3")

    def test_bad_value_names_line(self):
        with pytest.raises(ConfigError, match=r"<config>:2: bad value for tau"):
            parse_config("epochs = 3\ntau = warm\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="expected 'key = value'"):
            parse_config("epochs 3")

    def test_validate_catches_bad_combination(self):
        with pytest.raises(ConfigError):
            load_run_config(overrides=[("synth.burst_band", "100:7000")], env={})

    def test_seed_precedence(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("seed = 5\n")
        assert load_run_config(env={SEED_ENV: "3"})["seed"] == 3
        assert load_run_config(f, env={SEED_ENV: "3"})["seed"] == 5
        assert load_run_config(f, [("seed", "9")], env={SEED_ENV: "3"})["seed"] == 9

    def test_pair_and_list_codecs(self):
        cfg = parse_config("synth.f0_ranges = 50:60, 100:110\nencoder.channels = 2,3\nfmax = none\n")
        assert cfg["synth.f0_ranges"] == ((50.0, 60.0), (100.0, 110.0))
        assert cfg["encoder.channels"] == (2, 3)
        assert cfg["fmax"] is None

    def test_synth_config_mapping(self):
        cfg = parse_config("synth.train_clips = 3\nclip_seconds = 2.5\nseed = 4\n")
        sc = cfg.synth_config()
        assert (sc.train_clips, sc.seconds, sc.seed) == (3, 2.5, 4)


class TestHelpAndConfigCommand:
    @pytest.mark.parametrize("command", ["synth", "train", "score", "eval", "export", "config"])
    def test_help_lists_every_key(self, capsys, command):
        with pytest.raises(SystemExit) as exc:
            cli.main([command, "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for key in KEYS:
            assert key.name in out

    def test_config_dump(self, capsys, tmp_path):
        code, out, _ = run(capsys, "config", "--set", "epochs=3", "--seed", "11")
        assert code == 0
        cfg = parse_config(out)
        assert cfg["epochs"] == 3 and cfg["seed"] == 11

    def test_env_seed_is_lowest(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "21")
        f = tmp_path / "run.cfg"
        f.write_text("seed = 22\n")
        assert parse_config(run(capsys, "config")[1])["seed"] == 21
        assert parse_config(run(capsys, "config", "--config", f)[1])["seed"] == 22
        assert parse_config(run(capsys, "config", "--config", f, "--seed", "23")[1])["seed"] == 23

    def test_unknown_set_key_is_usage_error(self, capsys):
        code, _, err = run(capsys, "config", "--set", "nope=1")
        assert code == cli.EXIT_USAGE and "nope" in err

    def test_set_without_equals(self, capsys):
        code, _, err = run(capsys, "config", "--set", "epochs")
        assert code == cli.EXIT_USAGE and "KEY=VALUE" in err

    def test_missing_config_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "config", "--config", tmp_path / "absent.cfg")
        assert code == cli.EXIT_USAGE and "cannot read config" in err


class TestSynth:
    def test_prints_manifest(self, capsys, tmp_path):
        code, out, _ = run(capsys, "synth", "--out", tmp_path / "c", *small_cli_args())
        assert code == 0
        path = out.strip()
        assert path.endswith("manifest.csv") and os.path.isfile(path)
        # 3 sections x (4 train + 2 + 2 test)
        assert len(list((tmp_path / "c").rglob("*.wav"))) == 24

    def test_seed_flag_changes_output(self, capsys, tmp_path):
        small = small_cli_args()
        run(capsys, "synth", "--out", tmp_path / "a", *small)
        run(capsys, "synth", "--out", tmp_path / "b", "--seed", "1", *small)
        run(capsys, "synth", "--out", tmp_path / "a2", *small)
        name = "machine/train/sec00_source_normal_00000.wav"
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "a2" / name).read_bytes()
        assert a != (tmp_path / "b" / name).read_bytes()

    def test_unwritable_out(self, capsys, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, _, err = run(capsys, "synth", "--out", blocker / "sub", *small_cli_args())
        assert code == cli.EXIT_USAGE and "cannot write" in err


class TestTrainScoreEval:
    def test_artifacts(self, cli_run):
        _, run_dir = cli_run
        for name in ("model.fqcl", "train_log.csv", "scores.csv", "report.csv", "report.txt"):
            assert (run_dir / name).is_file()
        assert sorted(p.name for p in run_dir.glob("roc_*.csv")) == [
            f"roc_machine_sec0{i}.csv" for i in range(3)]

    def test_train_log_rows(self, cli_run):
        rows = list(csv.DictReader(io.StringIO((cli_run[1] / "train_log.csv").read_text())))
        assert [int(r["epoch"]) for r in rows] == [1, 2]

    def test_checkpoint_matches_config(self, cli_run):
        params = nn.load_checkpoint(cli_run[1] / "model.fqcl")
        assert params["proj.weight"].shape[0] == 8
        assert params["conv1.weight"].shape == (8, 4, 3, 3)

    def test_one_score_row_per_test_clip(self, cli_run):
        data, run_dir = cli_run
        rows = list(csv.DictReader(io.StringIO((run_dir / "scores.csv").read_text())))
        assert len(rows) == len(list((data / "machine" / "test").glob("*.wav")))
        assert all(0.0 <= float(r["score"]) <= 2.0 for r in rows)

    def test_report_average_is_mean(self, cli_run):
        rows = list(csv.reader(io.StringIO((cli_run[1] / "report.csv").read_text())))
        body = np.array([[float(v) for v in r[1:]] for r in rows[1:-1]])
        assert rows[-1][0] == "average"
        np.testing.assert_allclose([float(v) for v in rows[-1][1:]], body.mean(axis=0), rtol=0, atol=1e-15)

    def test_train_rerun_identical(self, capsys, cli_run, tmp_path):
        data, run_dir = cli_run
        code, _, _ = run(capsys, "train", "--data", data, "--out-checkpoint", tmp_path / "m.fqcl",
                         "--threads", "1", *small_cli_args())
        assert code == 0
        assert (tmp_path / "m.fqcl").read_bytes() == (run_dir / "model.fqcl").read_bytes()

    def test_class_conditional_mode(self, capsys, cli_run, tmp_path):
        code, out, _ = run(capsys, "train", "--data", cli_run[0], "--out-checkpoint", tmp_path / "m.fqcl",
                           "--mode", "class_conditional", "--epochs", "1", *small_cli_args())
        assert code == 0 and "wrote" in out
        assert len((tmp_path / "train_log.csv").read_text().splitlines()) == 2

    def test_section_filter(self, capsys, cli_run, tmp_path):
        data, run_dir = cli_run
        code, _, _ = run(capsys, "score", "--data", data, "--checkpoint", run_dir / "model.fqcl",
                         "--out", tmp_path / "s.csv", "--section", "sec01", "--k", "2", *small_cli_args())
        assert code == 0
        rows = list(csv.DictReader(io.StringIO((tmp_path / "s.csv").read_text())))
        assert len(rows) == 4 and {r["class_key"] for r in rows} == {"machine/sec01"}

    def test_missing_checkpoint(self, capsys, cli_run, tmp_path):
        code, _, err = run(capsys, "score", "--data", cli_run[0], "--checkpoint", tmp_path / "none.fqcl",
                           "--out", tmp_path / "s.csv", *small_cli_args())
        assert code == cli.EXIT_DATA and "checkpoint not found" in err

    def test_corrupt_checkpoint(self, capsys, cli_run, tmp_path):
        bad = tmp_path / "bad.fqcl"
        bad.write_bytes(b"JUNK" + (cli_run[1] / "model.fqcl").read_bytes()[4:])
        code, _, err = run(capsys, "score", "--data", cli_run[0], "--checkpoint", bad,
                           "--out", tmp_path / "s.csv", *small_cli_args())
        assert code == cli.EXIT_DATA and "magic" in err

    def test_checkpoint_shape_mismatch(self, capsys, cli_run, tmp_path):
        code, _, _ = run(capsys, "score", "--data", cli_run[0], "--checkpoint", cli_run[1] / "model.fqcl",
                         "--out", tmp_path / "s.csv", *small_cli_args(), "--set", "encoder.embed_dim=16")
        assert code == cli.EXIT_DATA

    def test_empty_corpus(self, capsys, tmp_path):
        (tmp_path / "empty").mkdir()
        code, _, _ = run(capsys, "train", "--data", tmp_path / "empty", "--out-checkpoint", tmp_path / "m.fqcl")
        assert code == cli.EXIT_DATA


def write_scores(path, rows):
    lines = ["clip_id,class_key,score,label"] + [f"c{i},{k},{s!r},{lab}" for i, (k, s, lab) in enumerate(rows)]
    path.write_text("\n".join(lines) + "\n")


class TestEval:
    def test_perfect_scores(self, capsys, tmp_path):
        rows = [("m/a", 0.1, "normal"), ("m/a", 0.2, "normal"), ("m/a", 0.8, "anomaly"), ("m/a", 0.9, "anomaly")]
        write_scores(tmp_path / "s.csv", rows)
        code, out, _ = run(capsys, "eval", "--scores", tmp_path / "s.csv", "--out-dir", tmp_path / "rep")
        assert code == 0 and "100.00" in out
        last = (tmp_path / "rep" / "report.csv").read_text().splitlines()[-1]
        assert last == "average,1.0,1.0"

    def test_p_one_equals_auc(self, capsys, tmp_path):
        rows = [("m/a", 1.0, "normal"), ("m/a", 3.0, "normal"), ("m/a", 2.0, "anomaly"), ("m/a", 4.0, "anomaly")]
        write_scores(tmp_path / "s.csv", rows)
        assert run(capsys, "eval", "--scores", tmp_path / "s.csv", "--p", "1.0")[0] == 0
        assert (tmp_path / "report.csv").read_text().splitlines()[1] == "m/a,0.75,0.75"

    def test_default_p(self, capsys, tmp_path):
        rows = [("m/a", 1.0, "normal"), ("m/a", 3.0, "normal"), ("m/a", 2.0, "anomaly"), ("m/a", 4.0, "anomaly")]
        write_scores(tmp_path / "s.csv", rows)
        run(capsys, "eval", "--scores", tmp_path / "s.csv")
        assert (tmp_path / "report.csv").read_text().splitlines()[1] == "m/a,0.75,0.5"

    def test_single_label_class_skipped(self, capsys, tmp_path):
        rows = [("m/a", 0.1, "normal"), ("m/a", 0.9, "anomaly"), ("m/b", 0.5, "normal")]
        write_scores(tmp_path / "s.csv", rows)
        code, out, _ = run(capsys, "eval", "--scores", tmp_path / "s.csv")
        assert code == 0 and "# skipped m/b" in out

    def test_missing_scores(self, capsys, tmp_path):
        code, _, err = run(capsys, "eval", "--scores", tmp_path / "none.csv")
        assert code == cli.EXIT_USAGE and "cannot read" in err


class TestExport:
    def test_pgm_header_default_clip(self, capsys, tmp_path):
        wav = tmp_path / "c.wav"
        write_wav(wav, synth.gen_normal(0, 0).samples)
        code, _, _ = run(capsys, "export", "--clip", wav, "--format", "pgm", "--out", tmp_path / "c.pgm")
        assert code == 0
        data = (tmp_path / "c.pgm").read_bytes()
        header = b"P5\n313 128\n255\n"
        assert data.startswith(header) and len(data) == len(header) + 313 * 128

    def test_pgm_low_band_on_bottom(self):
        values = np.arange(6.0).reshape(3, 2)  # row 0 = lowest mel band
        img = np.frombuffer(cli.spectrogram_pgm(values)[len(b"P5\n2 3\n255\n"):], np.uint8).reshape(3, 2)
        assert list(img[-1]) == [0, 51] and list(img[0]) == [204, 255]

    def test_csv_spectrogram(self, capsys, tmp_path):
        wav = tmp_path / "c.wav"
        write_wav(wav, np.zeros(16000))
        code, _, _ = run(capsys, "export", "--clip", wav, "--format", "csv", "--out", tmp_path / "c.csv",
                         "--set", "clip_seconds=1.0")
        assert code == 0
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert len(lines) == 128 and len(lines[0].split(",")) == 32

    def test_roc_csv(self, capsys, tmp_path):
        rows = [("m/a", 1.0, "normal"), ("m/a", 3.0, "normal"), ("m/a", 2.0, "anomaly"), ("m/a", 4.0, "anomaly"),
                ("m/b", 0.0, "normal"), ("m/b", 9.0, "anomaly")]
        write_scores(tmp_path / "s.csv", rows)
        code, _, _ = run(capsys, "export", "--scores", tmp_path / "s.csv", "--format", "csv",
                         "--out", tmp_path / "roc.csv", "--class", "m/a")
        assert code == 0
        lines = (tmp_path / "roc.csv").read_text().splitlines()
        assert lines[0] == "threshold,fpr,tpr" and len(lines) == 6
        assert lines[-1].endswith(",1.0,1.0")

    def test_scores_as_pgm_is_usage_error(self, capsys, tmp_path):
        write_scores(tmp_path / "s.csv", [("m/a", 0.1, "normal"), ("m/a", 0.9, "anomaly")])
        code, _, err = run(capsys, "export", "--scores", tmp_path / "s.csv", "--format", "pgm",
                           "--out", tmp_path / "x")
        assert code == cli.EXIT_USAGE and "csv" in err

    def test_invalid_format_lists_choices(self, capsys, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["export", "--scores", "s.csv", "--format", "png", "--out", "x"])
        assert exc.value.code == cli.EXIT_USAGE
        assert "'pgm', 'csv'" in capsys.readouterr().err

    def test_wrong_rate_clip(self, capsys, tmp_path):
        wav = tmp_path / "c.wav"
        write_wav(wav, np.zeros(8000), sample_rate=8000)
        code, _, err = run(capsys, "export", "--clip", wav, "--format", "csv", "--out", tmp_path / "c.csv")
        assert code == cli.EXIT_DATA and "8000" in err
