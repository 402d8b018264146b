import json

import numpy as np
import pytest

from restora.errors import ParseError
from restora.feeder import (
    feeder_from_dict,
    make_scenario,
    parse_feeder,
    serialize_feeder,
    validate_feeder,
)

from conftest import fixture_path


def test_f6_counts(f6):
    feeder, scenario = f6
    assert len(feeder.nodes) == 6
    assert len(feeder.lines) == 6
    assert feeder.substation_node == "1"
    assert scenario.horizon == 2
    # engineering -> p.u. on 1 MVA base
    ld3 = [ld for ld in feeder.loads if ld.node == "3"][0]
    assert ld3.p_max[0] == pytest.approx(0.3)
    line = feeder.line_by_id("L12")
    assert line.r[0, 0] == pytest.approx(0.02)


def test_unknown_node_reference(f6):
    doc = serialize_feeder(*f6)
    doc["lines"][0]["to"] = "99"
    with pytest.raises(ParseError, match="unknown node"):
        feeder_from_dict(doc)


def test_empty_node_list(f6):
    doc = serialize_feeder(*f6)
    doc["nodes"] = []
    with pytest.raises(ParseError, match="no nodes"):
        feeder_from_dict(doc)


def test_validate_ok(f6):
    feeder, _ = f6
    assert validate_feeder(feeder).ok


def test_tie_marked_closed_is_cycle(f6):
    doc = serialize_feeder(*f6)
    for ln in doc["lines"]:
        if ln["id"] == "T35":
            ln["kind"] = "switchable"
    with pytest.raises(ParseError, match="cycle under normal topology"):
        feeder_from_dict(doc)


def test_duplicate_node_id(f6):
    doc = serialize_feeder(*f6)
    doc["nodes"].append("1")
    with pytest.raises(ParseError, match="duplicate id"):
        feeder_from_dict(doc)


def test_roundtrip_identity(f6):
    feeder, scenario = f6
    doc = serialize_feeder(feeder, scenario)
    feeder2 = feeder_from_dict(doc)
    assert feeder2.nodes == feeder.nodes
    assert feeder2.substation_node == feeder.substation_node
    for a, b in zip(feeder.lines, feeder2.lines):
        assert a.id == b.id and a.kind == b.kind
        np.testing.assert_allclose(a.r, b.r, rtol=1e-12)
        np.testing.assert_allclose(a.s_max, b.s_max, rtol=1e-12)
    for a, b in zip(feeder.loads, feeder2.loads):
        assert a.node == b.node and a.dispatchable == b.dispatchable
        np.testing.assert_allclose(a.p_max, b.p_max, rtol=1e-12)
        np.testing.assert_allclose(a.priority, b.priority, rtol=1e-12)


def test_roundtrip_through_file(tmp_path, f6):
    feeder, scenario = f6
    p = tmp_path / "f6_copy.json"
    p.write_text(json.dumps(serialize_feeder(feeder, scenario)))
    feeder2, scenario2 = parse_feeder(p)
    assert len(feeder2.lines) == len(feeder.lines)
    assert scenario2.substation_profile == scenario.substation_profile
    assert scenario2.faulted_lines == scenario.faulted_lines


def test_normal_tree_edge_count(f6, f13):
    for feeder, _ in (f6, f13):
        closed = feeder.normal_closed_lines()
        assert len(closed) == len(feeder.nodes) - 1
        assert len(feeder.lines) >= len(feeder.nodes) - 1
        feeder.normal_tree()  # raises if not a substation-rooted tree


def test_make_scenario_blackout(f6):
    feeder, _ = f6
    sc = make_scenario(feeder, [], [(0.5, 0.25), (1.0, 0.5)], 2)
    assert sc.faulted_lines == frozenset()
    assert sc.horizon == 2


def test_make_scenario_fault(f6):
    feeder, _ = f6
    sc = make_scenario(feeder, ["L24"], [(0.5, 0.25)], 1)
    assert sc.faulted_lines == {"L24"}


def test_make_scenario_errors(f6):
    feeder, _ = f6
    with pytest.raises(ParseError, match="unknown faulted line"):
        make_scenario(feeder, ["nope"], [(0.5, 0.25)], 1)
    with pytest.raises(ParseError, match="horizon"):
        make_scenario(feeder, [], [], 0)
    with pytest.raises(ParseError, match="profile length"):
        make_scenario(feeder, [], [(0.5, 0.25)], 2)
    with pytest.raises(ParseError, match="nondecreasing"):
        make_scenario(feeder, [], [(1.0, 0.5), (0.5, 0.25)], 2)


def test_initial_pickup_parsing(tmp_path, f6):
    feeder, scenario = f6
    doc = serialize_feeder(feeder, scenario)
    doc["scenario"]["initial_pickup"] = {"3": 150}
    p = tmp_path / "f6_emergency.json"
    p.write_text(json.dumps(doc))
    _, sc = parse_feeder(p)
    np.testing.assert_allclose(sc.initial_pickup_vector("3", 1), [0.15])
    np.testing.assert_allclose(sc.initial_pickup_vector("4", 1), [0.0])
