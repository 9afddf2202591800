import os

import numpy as np
import pytest

from xmodal.scenegen.dataset import GenConfig, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """3 scenes x 1 preset x 4 frames at 32x32, GT only."""
    root = str(tmp_path_factory.mktemp("tiny"))
    generate_dataset(GenConfig(scenes=3, frames=4, presets=["clear"], width=32, height=32),
                     seed=5, out_dir=root)
    return root


@pytest.fixture
def snapshot():
    """Callable mapping a directory to {relative path: bytes}."""
    return file_bytes


def file_bytes(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for n in names:
            p = os.path.join(dirpath, n)
            with open(p, "rb") as f:
                out[os.path.relpath(p, root)] = f.read()
    return out


# -- acceptance verdicts -----------------------------------------------------------

VERDICTS = {}


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records one acceptance line and returns ``ok``."""
    def record(n, ok, detail):
        VERDICTS[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
