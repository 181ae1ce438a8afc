import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqcl.audio_io import (Clip, fit_length, parse_entry, read_wav, scan_manifest,
                             wav_bytes, write_wav)
from freqcl.errors import EmptyDatasetError, UnsupportedCodecError, WavFormatError


def _pcm16_file(path, values, sr=16000, channels=1):
    data = np.asarray(values, dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, channels, sr, sr * 2 * channels, 2 * channels, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(data)) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    return path


class TestReadWav:
    def test_max_positive_sample(self, tmp_path):
        clip = read_wav(_pcm16_file(tmp_path / "a.wav", [32767]))
        assert clip.samples.tolist() == [32767 / 32768]

    def test_all_zero_file(self, tmp_path):
        clip = read_wav(_pcm16_file(tmp_path / "z.wav", np.zeros(160000)))
        assert clip.sample_rate == 16000
        assert len(clip) == 160000 and not clip.samples.any()

    def test_sine_round_trip_within_quantisation(self, tmp_path):
        t = np.arange(16000) / 16000
        x = 0.8 * np.sin(2 * np.pi * 1000 * t)
        write_wav(tmp_path / "s.wav", x)
        back = read_wav(tmp_path / "s.wav").samples
        assert np.max(np.abs(back - x)) <= 2.0 ** -15

    def test_float32_round_trip_exact(self, tmp_path):
        x = np.random.default_rng(0).uniform(-1, 1, 999).astype(np.float32)
        write_wav(tmp_path / "f.wav", x, float32=True)
        assert np.array_equal(read_wav(tmp_path / "f.wav").samples, x)

    def test_stereo_keeps_channel_zero(self, tmp_path):
        inter = np.array([100, -5, 200, -5, 300, -5])
        clip = read_wav(_pcm16_file(tmp_path / "st.wav", inter, channels=2))
        np.testing.assert_array_equal(clip.samples * 32768, [100, 200, 300])

    def test_bad_riff_names_chunk(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"RIFX" + b"\0" * 40)
        with pytest.raises(WavFormatError, match="RIFF"):
            read_wav(p)

    def test_missing_data_chunk(self, tmp_path):
        p = _pcm16_file(tmp_path / "x.wav", [1, 2, 3])
        raw = p.read_bytes()
        p.write_bytes(raw[: raw.index(b"data")])
        with pytest.raises(WavFormatError, match="data"):
            read_wav(p)

    def test_unsupported_bit_depth(self, tmp_path):
        fmt = struct.pack("<HHIIHH", 1, 1, 16000, 48000, 3, 24)
        body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 3) + b"\0\0\0"
        p = tmp_path / "p24.wav"
        p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(UnsupportedCodecError):
            read_wav(p)


class TestFitLength:
    def _clip(self, n):
        return Clip("c", np.arange(n, dtype=float) + 1, 16000)

    def test_exact_length_unchanged(self):
        c = self._clip(160000)
        assert np.array_equal(fit_length(c, 10).samples, c.samples)

    def test_pads_at_end(self):
        out = fit_length(self._clip(150000), 10).samples
        assert len(out) == 160000 and not out[150000:].any() and out[149999] == 150000

    def test_truncates_at_end(self):
        out = fit_length(self._clip(170000), 10).samples
        assert len(out) == 160000 and out[-1] == 160000

    @given(st.integers(1, 4000), st.floats(0.01, 0.3))
    def test_idempotent(self, n, seconds):
        c = self._clip(n)
        once = fit_length(c, seconds)
        assert np.array_equal(fit_length(once, seconds).samples, once.samples)
        assert len(once) == round(seconds * 16000)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=300))
def test_pcm_round_trip_property(tmp_path_factory, values):
    x = np.array(values)
    p = tmp_path_factory.mktemp("rt") / "r.wav"
    p.write_bytes(wav_bytes(x, 16000))
    assert np.max(np.abs(read_wav(p).samples - x)) <= 2.0 ** -15


class TestManifest:
    def test_parse_entry(self):
        e = parse_entry("fan/train/sec00_source_normal_0001.wav")
        assert (e.machine_type, e.section, e.domain, e.label) == ("fan", "sec00", "source", "normal")
        assert e.class_key == "fan/sec00"

    def test_train_split_must_be_normal(self):
        with pytest.raises(ValueError, match="normal-only"):
            parse_entry("fan/train/sec00_source_anomaly_0001.wav")

    def test_scan_two_files_and_bad_name(self, tmp_path):
        for name in ["sec00_source_normal_0001.wav", "sec00_target_normal_0002.wav", "oops.wav"]:
            d = tmp_path / "fan" / "train"
            d.mkdir(parents=True, exist_ok=True)
            _pcm16_file(d / name, [0, 0])
        m = scan_manifest(tmp_path)
        assert len(m.entries) == 2
        assert len(m.warnings) == 1 and "oops.wav" in m.warnings[0]

    def test_empty_root(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            scan_manifest(tmp_path)

    def test_sorted_and_csv(self, small_corpus):
        root, _ = small_corpus
        m1, m2 = scan_manifest(root), scan_manifest(root)
        paths = [e.path for e in m1.entries]
        assert paths == sorted(paths)
        assert m1.to_csv() == m2.to_csv()
        assert m1.to_csv().splitlines()[0] == "path,machine_type,section,domain,label"
