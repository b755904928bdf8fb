import numpy as np
import pytest
from hypothesis import settings
from scipy.spatial.transform import Rotation

from semloc.geometry import Pose
from semloc.ipm import CameraIntrinsics, MountCalibration

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_pose(rng: np.random.Generator, scale: float = 10.0) -> Pose:
    q = Rotation.random(random_state=rng.integers(2**31)).as_quat()
    return Pose(q, rng.uniform(-scale, scale, 3))


def homogeneous(p: Pose) -> np.ndarray:
    """4x4 matrix built with scipy, independent of the package conversion."""
    T = np.eye(4)
    T[:3, :3] = Rotation.from_quat(p.rotation).as_matrix()
    T[:3, 3] = p.translation
    return T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def K():
    return CameraIntrinsics(1000.0, 1000.0, 640.0, 360.0)


@pytest.fixture
def calib():
    return MountCalibration.standard(1.5)


@pytest.fixture(scope="session")
def benchmark_bundle():
    from semloc.simulator import benchmark_spec, simulate
    return simulate(benchmark_spec(7))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LOG: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LOG, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
