import os
import shutil
import subprocess

import pytest


QUICK = [
    "phantom.n_unlabeled=6",
    "phantom.n_background=3",
    "phantom.n_test=3",
    "network.widths=[4,8]",
    "network.embed_channels=8",
    "trainer.steps_stage1=3",
    "trainer.steps_stage2=3",
    "trainer.synthetic_count=8",
    "trainer.checkpoint_every=0",
]


@pytest.fixture(scope="session")
def cli():
    exe = os.environ.get("ELSNET_CLI") or shutil.which("elsnet")
    if not exe:
        pytest.skip("elsnet executable not found (set ELSNET_CLI)")

    def run(*args):
        return subprocess.run([exe, *map(str, args)], capture_output=True, text=True, timeout=600)

    return run


@pytest.fixture
def quick_sets():
    out = []
    for s in QUICK:
        out += ["-s", s]
    return out
