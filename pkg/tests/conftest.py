import numpy as np
import pytest

from textsr.datapipe import synth_degrade, synthetic_region
from textsr.dataset import TextLine, load_manifest, write_dataset


def make_dataset(out_dir, n=3, scale=2, size=(64, 128), seed=0, extra_lines=()):
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        hr, lines = synthetic_region(*size, rng)
        lines = list(lines) + list(extra_lines)
        items.append((f"r{i:02d}", synth_degrade(hr, scale, 1.0, 0.01, seed=i), lines))
    return load_manifest(write_dataset(items, out_dir))


@pytest.fixture
def small_manifest(tmp_path):
    illegible = TextLine(((2, 2), (30, 2), (30, 14), (2, 14)), "###", "zh")
    return make_dataset(tmp_path / "ds", extra_lines=[illegible])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
