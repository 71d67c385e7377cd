import numpy as np
import pytest

from poserefine import (default_topology, default_mannequin, default_palette,
                        compute_bone_stats, sample_pose, CameraModel)


@pytest.fixture(scope="session")
def topo():
    return default_topology()


@pytest.fixture(scope="session")
def mannequin():
    return default_mannequin()


@pytest.fixture(scope="session")
def palette():
    return default_palette()


@pytest.fixture(scope="session")
def camera():
    return CameraModel()


def make_poses(topo, mannequin, n, seed):
    return [sample_pose(np.random.default_rng([seed, i]),
                        mannequin.limb_length_mm, topo,
                        mannequin.rest_direction, mannequin.cone_deg)
            for i in range(n)]


@pytest.fixture(scope="session")
def random_poses(topo, mannequin):
    return make_poses(topo, mannequin, 100, seed=123)


@pytest.fixture(scope="session")
def bone_stats(topo, random_poses):
    return compute_bone_stats(random_poses, topo)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A small generated corpus shared by store/eval/CLI tests."""
    from poserefine.pipeline import generate_corpus
    root = tmp_path_factory.mktemp("corpus") / "tiny"
    return generate_corpus(str(root), 20, seed=5)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance-criteria verdicts even under output capture."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
