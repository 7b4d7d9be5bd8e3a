from pathlib import Path

import pytest
from hypothesis import settings

from gazemap.fixtures import grid_town_osm, write_toy_fixture
from gazemap.osm_graph import parse_osm

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def town40():
    return parse_osm(DATA / "town40.osm")


@pytest.fixture(scope="session")
def grid_town():
    return parse_osm(grid_town_osm(10))


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    return write_toy_fixture(tmp_path_factory.mktemp("toy"))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
