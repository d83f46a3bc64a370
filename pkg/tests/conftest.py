import numpy as np
import pytest

from crossview.synthetic import (
    FixtureCorpusConfig,
    RingSceneConfig,
    fixture_trajectories,
    make_ring_scene,
    write_fixture_corpus,
)
from crossview.temporal import motion_stats


@pytest.fixture(scope="session")
def ring_scenes():
    return [
        make_ring_scene(RingSceneConfig(object="sphere", seed=0)),
        make_ring_scene(RingSceneConfig(object="box", seed=1)),
        make_ring_scene(RingSceneConfig(object="sphere", seed=2, object_size=0.15)),
    ]


@pytest.fixture(scope="session")
def sphere_scene(ring_scenes):
    return ring_scenes[0]


@pytest.fixture(scope="session")
def trajectories():
    return fixture_trajectories(FixtureCorpusConfig())


@pytest.fixture(scope="session")
def traj_stats(trajectories):
    return motion_stats(trajectories, "synthetic")


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """One ring scene and three trajectories written as manifests."""
    root = tmp_path_factory.mktemp("corpus")
    cfg = FixtureCorpusConfig(
        n_scenes=1,
        n_trajectories=3,
        scene=RingSceneConfig(n_cameras=6, n_points=20_000, width=320, height=240, focal=250.0),
    )
    paths = write_fixture_corpus(cfg, root)
    return root, paths


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion; errors count as failures."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})
    state = {}

    def report(number, title, ok, detail):
        state["n"] = number
        lines[number] = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'} - {detail}"
        print(lines[number])
        return ok

    yield report
    if not state:
        lines[request.node.name] = f"{request.node.name}: FAIL - raised before reporting"


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines, key=str):
            terminalreporter.write_line(lines[key])
