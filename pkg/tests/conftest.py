import numpy as np
import pytest

from voxhand.ingest import CameraIntrinsics, synth_frame

MSRA = CameraIntrinsics(241.42, 241.42, 160.0, 120.0)


@pytest.fixture(scope="session")
def intrinsics():
    return MSRA


@pytest.fixture(scope="session")
def synthetic_frames():
    return [synth_frame(i, MSRA, frame_index=i)[0] for i in range(8)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria (minutes)")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
