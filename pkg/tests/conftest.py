"""Shared fixtures and the acceptance summary printed at the end of a run."""

import numpy as np
import pytest

from dragvideo.synth import (
    GroundTruthCorrespondence,
    GroundTruthSegmenter,
    SceneSpec,
    render_scene,
)

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def blob_truth():
    return render_scene(SceneSpec(kind="translating_blob", frames=4, size=(64, 64),
                                  velocity=(2.0, 0.0)))


@pytest.fixture(scope="session")
def blob_oracles(blob_truth):
    return GroundTruthSegmenter(blob_truth), GroundTruthCorrespondence(blob_truth)
