import json
from pathlib import Path

import pytest

from restora.feeder import parse_feeder
from restora.graphs import RootedTree

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_path(name):
    return FIXTURES / name


@pytest.fixture(scope="session")
def f6():
    return parse_feeder(fixture_path("f6.json"))


@pytest.fixture(scope="session")
def f6_fault24():
    return parse_feeder(fixture_path("f6_fault24.json"))


@pytest.fixture(scope="session")
def f6_fault45():
    return parse_feeder(fixture_path("f6_fault45.json"))


@pytest.fixture(scope="session")
def f6_hard():
    return parse_feeder(fixture_path("f6_hard.json"))


@pytest.fixture(scope="session")
def f13():
    return parse_feeder(fixture_path("f13.json"))


@pytest.fixture(scope="session")
def ieee123_tree():
    doc = json.loads(fixture_path("ieee123_edges.json").read_text())
    edges = [(f"{a}-{b}", a, b) for a, b in doc["edges"]]
    nodes = sorted({n for _, a, b in edges for n in (a, b)})
    return RootedTree(nodes, edges, doc["root"])
