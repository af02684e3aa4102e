import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dtloc import rfmap  # noqa: E402
from dtloc.scene import bundled_scene_path, generate_grid, load_scene  # noqa: E402


@pytest.fixture(scope="session")
def six_scene():
    return load_scene(bundled_scene_path("six_buildings"))


@pytest.fixture(scope="session")
def free_scene():
    return load_scene(bundled_scene_path("free_space"))


@pytest.fixture(scope="session")
def six_grid(six_scene):
    return generate_grid(six_scene)


@pytest.fixture(scope="session")
def six_db(six_scene, six_grid):
    """Full default build of the bundled scene, shared by the whole session."""
    return rfmap.build(six_scene, six_grid, max_depth=5, workers=1)


@pytest.fixture(scope="session")
def six_db_file(six_db, tmp_path_factory):
    path = tmp_path_factory.mktemp("db") / "six.rfm"
    rfmap.save(six_db, path)
    return path


_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the lines are printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        _CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
