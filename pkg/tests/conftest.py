import sys

import numpy as np
import pytest

from freqcl import synth

# a small corpus that still has every structural feature of the default one
SMALL = synth.SynthConfig(train_clips=4, test_normal=2, test_anomaly=2, seconds=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = synth.gen_corpus(SMALL, root)
    return root, manifest


def small_cli_args():
    """--set overrides that make the CLI match SMALL and run in seconds."""
    sets = {
        "clip_seconds": "1.0", "synth.train_clips": "4", "synth.test_normal": "2",
        "synth.test_anomaly": "2", "epochs": "2", "batch": "4", "queue_n": "8",
        "encoder.channels": "4,8", "encoder.embed_dim": "8",
    }
    out = []
    for k, v in sets.items():
        out += ["--set", f"{k}={v}"]
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
